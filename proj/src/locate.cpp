#include "anatomap/locate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "anatomap/kernels.hpp"
#include "anatomap/train.hpp"
#include "anatomap/util.hpp"

namespace anatomap {

namespace {

const Volume& normalized_view(const Volume& v, std::optional<Volume>& storage) {
  if (v.domain() == IntensityDomain::Normalized) return v;
  storage = normalize_hu(v);
  return *storage;
}

Shape3 patch_cube(const nn::NetworkWeights& w) {
  const int s = w.config.patch_side;
  return {s, s, s};
}

std::vector<float> channel_vector(const nn::Tensor& f, Voxel at) {
  const Shape3 sp{f.dim(1), f.dim(2), f.dim(3)};
  std::vector<float> v(std::size_t(f.dim(0)));
  for (int c = 0; c < f.dim(0); ++c) v[std::size_t(c)] = f[std::size_t(c) * sp.count() + sp.offset(at)];
  return v;
}

const std::string& key_of(const LandmarkModel& m) { return m.name; }
const std::string& key_of(const std::string& s) { return s; }

void renormalize(std::vector<float>& v) {
  double n2 = 0.0;
  for (float x : v) n2 += double(x) * x;
  const double n = std::max(std::sqrt(n2), double(nn::kernels::kNormEps));
  for (float& x : v) x = float(x / n);
}

}  // namespace

// ---------------------------------------------------------------------------
// support model

bool SupportModel::contains(const std::string& name) const {
  return std::binary_search(landmarks.begin(), landmarks.end(), name,
                            [](const auto& a, const auto& b) { return key_of(a) < key_of(b); });
}

const LandmarkModel& SupportModel::at(const std::string& name) const {
  auto it = std::lower_bound(landmarks.begin(), landmarks.end(), name,
                             [](const LandmarkModel& m, const std::string& n) { return m.name < n; });
  if (it == landmarks.end() || it->name != name) {
    throw Error(ErrorCode::InvalidArgument, "support model has no landmark '" + name + "'");
  }
  return *it;
}

std::vector<const LandmarkModel*> SupportModel::organ(const std::string& organ) const {
  std::vector<const LandmarkModel*> out;
  const std::string prefix = organ + "/";
  for (const auto& m : landmarks)
    if (m.name.rfind(prefix, 0) == 0) out.push_back(&m);
  return out;
}

std::vector<std::string> SupportModel::organs() const {
  std::set<std::string> names;
  for (const auto& m : landmarks) names.insert(m.name.substr(0, m.name.find('/')));
  return {names.begin(), names.end()};
}

nn::MedlamOutput embed_at(const Volume& volume, Voxel at, const nn::NetworkWeights& weights) {
  std::optional<Volume> storage;
  const Volume& v = normalized_view(volume, storage);
  return nn::forward_medlam(extract_patch(v, at, patch_cube(weights)), weights);
}

std::vector<float> average_features(const std::vector<std::vector<float>>& vectors) {
  if (vectors.empty()) throw Error(ErrorCode::EmptyInput, "no feature vectors to average");
  std::vector<double> sum(vectors.front().size(), 0.0);
  for (const auto& v : vectors) {
    if (v.size() != sum.size()) throw Error(ErrorCode::ShapeMismatch, "feature vectors differ in length");
    for (std::size_t j = 0; j < v.size(); ++j) sum[j] += v[j];
  }
  std::vector<float> out(sum.size());
  for (std::size_t j = 0; j < sum.size(); ++j) out[j] = float(sum[j] / double(vectors.size()));
  renormalize(out);
  return out;
}

LandmarkModel build_landmark_model(const std::string& name,
                                   const std::vector<std::pair<const Volume*, Voxel>>& supports,
                                   const nn::NetworkWeights& weights) {
  if (supports.empty()) throw Error(ErrorCode::InvalidArgument, "landmark '" + name + "' has no supports");
  LandmarkModel m;
  m.name = name;
  m.k = int(supports.size());
  const Voxel center = patch_cube(weights).center();
  std::array<std::vector<std::vector<float>>, 3> per_scale;
  for (const auto& [volume, at] : supports) {
    if (!volume->shape().contains(at)) {
      std::ostringstream os;
      os << "landmark '" << name << "' at " << at << " is outside a " << volume->shape() << " volume";
      throw Error(ErrorCode::LandmarkOutOfBounds, os.str());
    }
    const auto out = embed_at(*volume, at, weights);
    m.p = m.p + out.p;
    for (std::size_t i = 0; i < 3; ++i) {
      per_scale[i].push_back(channel_vector(out.features[i], {center.z >> i, center.y >> i, center.x >> i}));
    }
  }
  m.p = m.p * (1.0 / double(m.k));
  for (std::size_t i = 0; i < 3; ++i) m.f[i] = average_features(per_scale[i]);
  return m;
}

SupportModel build_support_model(const std::vector<SupportCase>& supports, const nn::NetworkWeights& weights,
                                 int jobs) {
  if (supports.empty()) throw Error(ErrorCode::InvalidArgument, "support set is empty");
  std::vector<std::string> names;
  for (const auto& [name, _] : supports.front().landmarks) names.push_back(name);
  std::vector<std::optional<Volume>> storage(supports.size());
  std::vector<const Volume*> volumes;
  for (std::size_t i = 0; i < supports.size(); ++i) volumes.push_back(&normalized_view(*supports[i].volume, storage[i]));

  SupportModel model;
  model.k = int(supports.size());
  model.landmarks.resize(names.size());
  parallel_for(names.size(), jobs, [&](std::size_t li) {
    std::vector<std::pair<const Volume*, Voxel>> list;
    for (std::size_t s = 0; s < supports.size(); ++s) {
      auto it = supports[s].landmarks.find(names[li]);
      if (it == supports[s].landmarks.end()) {
        throw Error(ErrorCode::InvalidArgument,
                    "support " + std::to_string(s) + " lacks landmark '" + names[li] + "'");
      }
      list.emplace_back(volumes[s], it->second);
    }
    model.landmarks[li] = build_landmark_model(names[li], list, weights);
  });
  return model;
}

// ---------------------------------------------------------------------------
// inference

EmbeddingCache::EmbeddingCache(const Volume& volume, const nn::NetworkWeights& weights)
    : volume_(volume.domain() == IntensityDomain::Normalized ? volume : normalize_hu(volume)), weights_(weights) {}

const nn::MedlamOutput& EmbeddingCache::embed(Voxel at) {
  {
    std::lock_guard lock(mu_);
    auto it = cache_.find(at);
    if (it != cache_.end()) return it->second;
  }
  auto out = nn::forward_medlam(extract_patch(volume_, at, patch_cube(weights_)), weights_);
  std::lock_guard lock(mu_);
  return cache_.emplace(at, std::move(out)).first->second;
}

AgentState coarse_localize(EmbeddingCache& query, const LandmarkModel& model, const Vec3& r, Voxel start,
                           int max_steps) {
  const Shape3& shape = query.volume().shape();
  const Spacing& e = query.volume().spacing();
  if (!shape.contains(start)) throw Error(ErrorCode::InvalidArgument, "agent start outside the query volume");
  AgentState state;
  state.position = start;
  for (int step = 0; step < max_steps; ++step) {
    const auto& out = query.embed(state.position);
    const Offset d = predict_offset(out.p, model.p, r);
    const Vec3 dv{d.z / e.z(), d.y / e.y(), d.x / e.x()};
    if (std::abs(dv.z) < 1.0 && std::abs(dv.y) < 1.0 && std::abs(dv.x) < 1.0) {
      state.converged = true;
      break;
    }
    state.steps_mm.push_back(d);
    const Voxel move{round_half_down(dv.z), round_half_down(dv.y), round_half_down(dv.x)};
    state.position = shape.clamp(state.position + move);
  }
  return state;
}

AgentState coarse_localize(const Volume& query, const LandmarkModel& model, const nn::NetworkWeights& weights,
                           const Vec3& r, Voxel start, int max_steps) {
  EmbeddingCache cache(query, weights);
  return coarse_localize(cache, model, r, start, max_steps);
}

Grid3 similarity_map(const nn::MultiScaleFeatures& features, const LandmarkModel& model) {
  const nn::Tensor& f0 = features[0];
  const Shape3 full{f0.dim(1), f0.dim(2), f0.dim(3)};
  Grid3 total(full, 0.0f);
  for (std::size_t i = 0; i < 3; ++i) {
    const nn::Tensor& fi = features[i];
    if (std::size_t(fi.dim(0)) != model.f[i].size()) {
      throw Error(ErrorCode::ShapeMismatch, "support feature width does not match the network at scale " +
                                                std::to_string(i));
    }
    const nn::Tensor map = nn::kernels::dot_map_forward(
        nn::Tensor({int(model.f[i].size())}, model.f[i]), fi);
    const Shape3 ms{map.dim(0), map.dim(1), map.dim(2)};
    for (int z = 0; z < full.z; ++z)
      for (int y = 0; y < full.y; ++y)
        for (int x = 0; x < full.x; ++x) {
          total.at(z, y, x) += map[ms.offset({z >> i, y >> i, x >> i})];
        }
  }
  return total;
}

Voxel mss_refine(EmbeddingCache& query, Voxel coarse, const LandmarkModel& model) {
  const Shape3& shape = query.volume().shape();
  if (!shape.contains(coarse)) throw Error(ErrorCode::InvalidArgument, "coarse point outside the query volume");
  const Grid3 sim = similarity_map(query.embed(coarse).features, model);
  const auto data = sim.data();
  const auto best = std::size_t(std::max_element(data.begin(), data.end()) - data.begin());
  const Shape3& ps = sim.shape();
  const Voxel local{int(best / (std::size_t(ps.y) * ps.x)), int((best / ps.x) % ps.y), int(best % ps.x)};
  return shape.clamp(coarse - ps.center() + local);
}

Voxel mss_refine(const Volume& query, Voxel coarse, const LandmarkModel& model, const nn::NetworkWeights& weights) {
  EmbeddingCache cache(query, weights);
  return mss_refine(cache, coarse, model);
}

const char* to_string(LocalizationMode mode) { return mode == LocalizationMode::Wpl ? "wpl" : "spl"; }

LocalizationMode localization_mode_from_string(const std::string& s) {
  if (s == "wpl") return LocalizationMode::Wpl;
  if (s == "spl") return LocalizationMode::Spl;
  throw Error(ErrorCode::InvalidArgument, "mode must be 'wpl' or 'spl', got '" + s + "'");
}

std::string wpl_landmark_name(const std::string& organ, ExtremeRole role) {
  return organ + "/" + to_string(role);
}

std::string spl_landmark_name(const std::string& organ, int segment, ExtremeRole role) {
  return organ + "/seg" + std::to_string(segment) + "/" + to_string(role);
}

int organ_segment_count(const SupportModel& model, const std::string& organ) {
  const std::string prefix = organ + "/seg";
  int m = 0;
  for (const auto* lm : model.organ(organ)) {
    if (lm->name.rfind(prefix, 0) != 0) continue;
    const auto slash = lm->name.find('/', prefix.size());
    m = std::max(m, std::stoi(lm->name.substr(prefix.size(), slash - prefix.size())) + 1);
  }
  return m;
}

namespace {

std::vector<std::string> organ_landmark_names(const SupportModel& model, const std::string& organ,
                                              LocalizationMode mode) {
  std::vector<std::string> names;
  if (mode == LocalizationMode::Wpl) {
    for (auto role : kExtremeRoles) names.push_back(wpl_landmark_name(organ, role));
  } else {
    const int m = organ_segment_count(model, organ);
    for (int s = 0; s < m; ++s)
      for (auto role : kExtremeRoles) names.push_back(spl_landmark_name(organ, s, role));
  }
  std::size_t present = 0;
  for (const auto& n : names) {
    if (model.contains(n)) ++present;
  }
  if (names.empty() || present != names.size()) {
    throw Error(ErrorCode::GroupingError, "organ '" + organ + "' needs " +
                                              (mode == LocalizationMode::Wpl ? std::string("6") : "6m") +
                                              " landmarks in " + to_string(mode) + " mode, model has " +
                                              std::to_string(present) + " of " + std::to_string(names.size()));
  }
  return names;
}

// FNV-1a, so random starts do not depend on landmark order.
std::uint64_t name_key(const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) h = (h ^ c) * 1099511628211ull;
  return h;
}

std::vector<LandmarkEstimate> run_landmarks(EmbeddingCache& cache, const SupportModel& model,
                                            const std::vector<std::string>& names, const Vec3& r,
                                            const LocateOptions& options) {
  const Shape3& shape = cache.volume().shape();
  std::vector<LandmarkEstimate> out(names.size());
  parallel_for(names.size(), options.jobs, [&](std::size_t i) {
    const LandmarkModel& lm = model.at(names[i]);
    Voxel start = shape.center();
    if (options.random_start) {
      std::mt19937_64 rng(mix_seed(options.seed, name_key(names[i])));
      start = {std::uniform_int_distribution<int>(0, shape.z - 1)(rng),
               std::uniform_int_distribution<int>(0, shape.y - 1)(rng),
               std::uniform_int_distribution<int>(0, shape.x - 1)(rng)};
    }
    const AgentState agent = coarse_localize(cache, lm, r, start, options.max_steps);
    out[i].name = names[i];
    out[i].coarse = agent.position;
    out[i].steps = int(agent.steps_mm.size());
    out[i].point = options.refine ? mss_refine(cache, agent.position, lm) : agent.position;
  });
  return out;
}

}  // namespace

std::vector<LandmarkEstimate> localize_organ_points(const Volume& query, const SupportModel& model,
                                                    const std::string& organ, LocalizationMode mode,
                                                    const nn::NetworkWeights& weights, const Vec3& r,
                                                    const LocateOptions& options) {
  const auto names = organ_landmark_names(model, organ, mode);
  EmbeddingCache cache(query, weights);
  return run_landmarks(cache, model, names, r, options);
}

std::vector<LandmarkEstimate> localize_all(const Volume& query, const SupportModel& model,
                                           const nn::NetworkWeights& weights, const Vec3& r,
                                           const LocateOptions& options) {
  std::vector<std::string> names;
  for (const auto& lm : model.landmarks) names.push_back(lm.name);
  EmbeddingCache cache(query, weights);
  return run_landmarks(cache, model, names, r, options);
}

// ---------------------------------------------------------------------------
// ground-truth landmarks and descriptors

int cohort_segment_count(const std::vector<const Mask*>& masks, const Spacing& spacing, double n_mm) {
  if (masks.empty()) throw Error(ErrorCode::EmptyInput, "no masks to derive a segment count from");
  double span = std::numeric_limits<double>::infinity();
  for (const Mask* m : masks) span = std::min(span, z_span_mm(*m, spacing));
  return segment_count(span, n_mm);
}

std::map<std::string, Voxel> organ_landmarks(const OrganTruth& truth, LocalizationMode mode, int m) {
  std::map<std::string, Voxel> out;
  if (mode == LocalizationMode::Wpl) {
    const auto ex = mask_extremes(truth.mask);
    for (std::size_t i = 0; i < 6; ++i) out[wpl_landmark_name(truth.name, kExtremeRoles[i])] = ex[i];
  } else {
    const auto segs = segment_extremes(truth.mask, m);
    for (std::size_t s = 0; s < segs.size(); ++s)
      for (std::size_t i = 0; i < 6; ++i) out[spl_landmark_name(truth.name, int(s), kExtremeRoles[i])] = segs[s][i];
  }
  return out;
}

nlohmann::ordered_json support_descriptor_json(const std::vector<SupportEntry>& entries) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json lms = nlohmann::ordered_json::object();
    for (const auto& [name, v] : e.landmarks) lms[name] = {v.z, v.y, v.x};
    arr.push_back({{"volume", e.volume}, {"landmarks", lms}});
  }
  return arr;
}

std::vector<SupportEntry> parse_support_descriptor(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) {
    throw Error(ErrorCode::SchemaMismatch, "support descriptor must be a nonempty array");
  }
  std::vector<SupportEntry> out;
  try {
    for (const auto& item : j) {
      SupportEntry e;
      e.volume = item.at("volume").get<std::string>();
      for (const auto& [name, v] : item.at("landmarks").items()) {
        const auto a = v.get<std::array<int, 3>>();
        e.landmarks[name] = {a[0], a[1], a[2]};
      }
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("support descriptor: ") + e.what());
  }
  return out;
}

}  // namespace anatomap
