#include "anatomap/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "anatomap/util.hpp"

namespace anatomap {

using nn::Tensor;
using nn::Var;

// ---------------------------------------------------------------------------
// config

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::InvalidArgument, "train config " + field + ": " + why);
  };
  for (int a = 0; a < 3; ++a) {
    if (!(r[a] > 0.0) || !std::isfinite(r[a])) fail("r", "components must be positive and finite");
  }
  if (patch_side < 16 || patch_side % 16 != 0) fail("patch_side", "must be a positive multiple of 16");
  if (large_patch_side < patch_side || large_patch_side % 4 != 0) {
    fail("large_patch_side", "must be >= patch_side and divisible by 4");
  }
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (epochs < 0) fail("epochs", "must be >= 0");
  if (!(learning_rate > 0.0)) fail("learning_rate", "must be positive");
  if (mss_points < 0) fail("mss_points", "must be >= 0");
  if (mss_margin < 0 || 2 * mss_margin >= patch_side) fail("mss_margin", "must leave an interior");
  if (mss_max_tries < 1) fail("mss_max_tries", "must be >= 1");
  if (!(mss_temperature > 0.0) || !std::isfinite(mss_temperature)) fail("mss_temperature", "must be positive");
  if (!(mse_weight >= 0.0) || !std::isfinite(mse_weight)) fail("mse_weight", "must be finite and >= 0");
  if (pairs_per_volume < 1) fail("pairs_per_volume", "must be >= 1");
  if (augment.max_rotation_deg < 0 || augment.max_elastic_vox < 0 || augment.noise_sigma < 0 ||
      !(augment.elastic_sigma_vox > 0)) {
    fail("augment", "ranges must be non-negative and sigma positive");
  }
  network_config().validate();
}

nn::NetworkConfig TrainConfig::network_config() const {
  nn::NetworkConfig c;
  c.patch_side = patch_side;
  c.encoder_channels = encoder_channels;
  c.mlp_hidden = mlp_hidden;
  c.feature_channels = feature_channels;
  return c;
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["r"] = {r.z, r.y, r.x};
  j["patch_side"] = patch_side;
  j["large_patch_side"] = large_patch_side;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["learning_rate"] = learning_rate;
  j["mss_points"] = mss_points;
  j["mss_margin"] = mss_margin;
  j["mss_max_tries"] = mss_max_tries;
  j["mss_temperature"] = mss_temperature;
  j["mse_weight"] = mse_weight;
  j["pairs_per_volume"] = pairs_per_volume;
  j["augment"] = {{"max_rotation_deg", augment.max_rotation_deg},
                  {"max_elastic_vox", augment.max_elastic_vox},
                  {"elastic_sigma_vox", augment.elastic_sigma_vox},
                  {"noise_sigma", augment.noise_sigma}};
  j["seed"] = seed;
  j["encoder_channels"] = encoder_channels;
  j["mlp_hidden"] = mlp_hidden;
  j["feature_channels"] = feature_channels;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"r",          "patch_side",    "large_patch_side", "batch_size",
                                           "epochs",     "learning_rate", "mss_points",       "mss_margin",
                                           "mss_max_tries", "mss_temperature", "mse_weight", "pairs_per_volume", "augment", "seed",
                                           "encoder_channels", "mlp_hidden", "feature_channels"};
  static const std::set<std::string> known_aug{"max_rotation_deg", "max_elastic_vox", "elastic_sigma_vox",
                                               "noise_sigma"};
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "train config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw Error(ErrorCode::InvalidArgument, "train config: unknown key '" + key + "'");
  }
  TrainConfig c;
  try {
    if (j.contains("r")) {
      const auto r = j.at("r").get<std::array<double, 3>>();
      c.r = {r[0], r[1], r[2]};
    }
    auto opt = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    opt("patch_side", c.patch_side);
    opt("large_patch_side", c.large_patch_side);
    opt("batch_size", c.batch_size);
    opt("epochs", c.epochs);
    opt("learning_rate", c.learning_rate);
    opt("mss_points", c.mss_points);
    opt("mss_margin", c.mss_margin);
    opt("mss_max_tries", c.mss_max_tries);
    opt("mss_temperature", c.mss_temperature);
    opt("mse_weight", c.mse_weight);
    opt("pairs_per_volume", c.pairs_per_volume);
    opt("seed", c.seed);
    opt("encoder_channels", c.encoder_channels);
    opt("mlp_hidden", c.mlp_hidden);
    opt("feature_channels", c.feature_channels);
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      for (const auto& [key, _] : a.items()) {
        if (!known_aug.contains(key)) {
          throw Error(ErrorCode::InvalidArgument, "train config: unknown key 'augment." + key + "'");
        }
      }
      if (a.contains("max_rotation_deg")) c.augment.max_rotation_deg = a.at("max_rotation_deg").get<double>();
      if (a.contains("max_elastic_vox")) c.augment.max_elastic_vox = a.at("max_elastic_vox").get<double>();
      if (a.contains("elastic_sigma_vox")) c.augment.elastic_sigma_vox = a.at("elastic_sigma_vox").get<double>();
      if (a.contains("noise_sigma")) c.augment.noise_sigma = a.at("noise_sigma").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// sampling

namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Voxel random_voxel(std::mt19937_64& rng, int lo, int hi) {
  Voxel v;
  v.z = uniform_int(rng, lo, hi);
  v.y = uniform_int(rng, lo, hi);
  v.x = uniform_int(rng, lo, hi);
  return v;
}

Voxel round_voxel(const Vec3& p) { return {round_half_up(p.z), round_half_up(p.y), round_half_up(p.x)}; }

std::vector<MssPoint> sample_points(std::mt19937_64& rng, const TrainConfig& config, const AugmentTransform& t,
                                    Voxel o, Voxel o_aug) {
  const int s = config.patch_side;
  const Shape3 cube{s, s, s};
  const Vec3 half = to_vec(cube.center());
  std::vector<MssPoint> points;
  for (int j = 0; j < config.mss_points; ++j) {
    for (int attempt = 0; attempt < config.mss_max_tries; ++attempt) {
      const Voxel c = random_voxel(rng, config.mss_margin, s - 1 - config.mss_margin);
      const Vec3 in_large = to_vec(c) + to_vec(o) - half;
      const Vec3 dst = t.map_point(in_large) - (to_vec(o_aug) - half);
      if (cube.contains(round_voxel(dst))) {
        points.push_back({c, dst});
        break;
      }
    }
  }
  return points;
}

}  // namespace

SamplePair sample_training_pair(const Volume& volume, const TrainConfig& config, std::uint64_t seed) {
  const int big = config.large_patch_side;
  const int s = config.patch_side;
  const Shape3& shape = volume.shape();
  for (int a = 0; a < 3; ++a) {
    if (shape[a] < big) {
      throw Error(ErrorCode::VolumeTooSmall, "volume " + std::to_string(shape.z) + "x" + std::to_string(shape.y) +
                                                 "x" + std::to_string(shape.x) + " cannot hold a " +
                                                 std::to_string(big) + "^3 patch");
    }
  }
  std::mt19937_64 rng(seed);
  const Shape3 big_cube{big, big, big};
  const Shape3 small_cube{s, s, s};
  auto large_center = [&] {
    Voxel c;
    for (int a = 0; a < 3; ++a) c[a] = uniform_int(rng, big / 2, shape[a] - big + big / 2);
    return c;
  };
  auto small_offset = [&] { return random_voxel(rng, s / 2, big - s + s / 2); };

  const Voxel big_q = large_center();
  const Voxel big_s = large_center();
  const Patch large_q = extract_patch(volume, big_q, big_cube);
  const Patch large_s = extract_patch(volume, big_s, big_cube);
  AugmentedPatch aug_q = augment_patch(large_q, random_augment_params(rng(), config.augment));
  AugmentedPatch aug_s = augment_patch(large_s, random_augment_params(rng(), config.augment));

  const Voxel oq = small_offset(), oq_aug = small_offset();
  const Voxel os = small_offset(), os_aug = small_offset();
  const Voxel half_big = big_cube.center();

  SamplePair pair;
  pair.e = volume.spacing();
  pair.cq = big_q - half_big + oq;
  pair.cs = big_s - half_big + os;
  pair.xq = Patch{large_q.grid.crop(oq, small_cube), pair.cq, pair.e};
  pair.xs = Patch{large_s.grid.crop(os, small_cube), pair.cs, pair.e};
  pair.xq_aug = Patch{aug_q.patch.grid.crop(oq_aug, small_cube), big_q - half_big + oq_aug, pair.e};
  pair.xs_aug = Patch{aug_s.patch.grid.crop(os_aug, small_cube), big_s - half_big + os_aug, pair.e};
  pair.tq = std::move(aug_q.transform);
  pair.ts = std::move(aug_s.transform);
  pair.q_points = sample_points(rng, config, pair.tq, oq, oq_aug);
  pair.s_points = sample_points(rng, config, pair.ts, os, os_aug);
  return pair;
}

// ---------------------------------------------------------------------------
// losses

Offset offset_ground_truth(Voxel c_q, Voxel c_s, const Spacing& e) {
  return {double(c_s.z - c_q.z) * e.z(), double(c_s.y - c_q.y) * e.y(), double(c_s.x - c_q.x) * e.x()};
}

Offset predict_offset(const nn::LatentCoord& p_q, const nn::LatentCoord& p_s, const Vec3& r) {
  Offset d;
  for (int a = 0; a < 3; ++a) {
    d[a] = r[a] * std::tanh(p_s[a] - p_q[a]);
    // tanh rounds to exactly 1 past |x| ~ 19; keep the bound open.
    if (std::abs(d[a]) >= r[a]) d[a] = std::copysign(std::nextafter(r[a], 0.0), d[a]);
  }
  return d;
}

Var predict_offset(const Var& p_q, const Var& p_s, const Vec3& r) {
  return nn::mul_const(nn::tanh(nn::sub(p_s, p_q)),
                       Tensor({3}, std::vector<float>{float(r.z), float(r.y), float(r.x)}));
}

double loss_uam(const Offset& d_pred, const Offset& d_true) {
  const Vec3 diff = d_pred - d_true;
  return diff.z * diff.z + diff.y * diff.y + diff.x * diff.x;
}

Var loss_uam(const Var& d_pred, const Offset& d_true) {
  const Var target(Tensor({3}, std::vector<float>{float(d_true.z), float(d_true.y), float(d_true.x)}));
  return nn::sum_squares(nn::sub(d_pred, target));
}

Voxel mss_target_voxel(const Vec3& c_aug, int scale, Shape3 map_shape) {
  if (scale < 0 || scale > 2) throw Error(ErrorCode::InvalidArgument, "scale must be 0, 1 or 2");
  const int f = 1 << scale;
  const Shape3 full{map_shape.z * f, map_shape.y * f, map_shape.x * f};
  if (!full.contains(round_voxel(c_aug))) {
    throw Error(ErrorCode::PointOutsidePatch, "target point outside the augmented patch");
  }
  return map_shape.clamp(round_voxel(c_aug * (1.0 / f)));
}

Tensor mss_target(const Vec3& c_aug, int scale, Shape3 map_shape) {
  Tensor t({map_shape.z, map_shape.y, map_shape.x});
  t[map_shape.offset(mss_target_voxel(c_aug, scale, map_shape))] = 1.0f;
  return t;
}

Voxel mss_source_voxel(Voxel c, int scale, Shape3 map_shape) {
  const int f = 1 << scale;
  const Shape3 full{map_shape.z * f, map_shape.y * f, map_shape.x * f};
  if (!full.contains(c)) throw Error(ErrorCode::PointOutsidePatch, "source point outside the patch");
  return map_shape.clamp(round_voxel(to_vec(c) * (1.0 / f)));
}

Var loss_mss(const std::array<Var, 3>& f, const std::array<Var, 3>& f_aug, const std::vector<MssPoint>& points,
             double temperature) {
  if (points.empty()) throw Error(ErrorCode::InvalidArgument, "loss_mss needs at least one point");
  std::vector<Var> terms;
  for (const auto& pt : points) {
    for (std::size_t i = 0; i < 3; ++i) {
      const Tensor& fi = f[i].value();
      const Tensor& fa = f_aug[i].value();
      if (fi.rank() != 4 || fa.rank() != 4 || fi.dim(0) != fa.dim(0)) {
        throw Error(ErrorCode::ShapeMismatch, "loss_mss feature maps must be (C, Z, Y, X) with equal C");
      }
      const Shape3 src_shape{fi.dim(1), fi.dim(2), fi.dim(3)};
      const Shape3 dst_shape{fa.dim(1), fa.dim(2), fa.dim(3)};
      const Voxel src = mss_source_voxel(pt.src, int(i), src_shape);
      const Voxel hot = mss_target_voxel(pt.dst, int(i), dst_shape);
      const Var v = nn::gather_channels(f[i], src);
      const Var s = nn::softmax_spatial(nn::scale(nn::dot_map(v, f_aug[i]), float(1.0 / temperature)));
      terms.push_back(nn::bce_onehot(s, dst_shape.offset(hot)));
    }
  }
  return nn::scale(nn::add_scalars(terms), 1.0f / float(points.size()));
}

PairLoss pair_loss(const SamplePair& pair, const nn::NetworkWeights& weights, const Vec3& r, bool with_grads,
                   double mss_temperature, double mse_weight) {
  const auto params = nn::bind_parameters(weights, with_grads);
  auto run = [&](const Patch& p) { return nn::forward_graph(Var(nn::patch_tensor(p.grid)), params, weights.config); };
  const auto gq = run(pair.xq);
  const auto gs = run(pair.xs);
  const Var l_mse = loss_uam(predict_offset(gq.p, gs.p, r), offset_ground_truth(pair.cq, pair.cs, pair.e));

  std::vector<Var> terms{nn::scale(l_mse, float(mse_weight))};
  const std::size_t n_points = pair.q_points.size() + pair.s_points.size();
  Var l_ce;
  if (n_points > 0) {
    std::vector<Var> ce;
    auto add_view = [&](const nn::MedlamGraph& g, const Patch& aug, const std::vector<MssPoint>& pts) {
      if (pts.empty()) return;
      const auto ga = run(aug);
      ce.push_back(nn::scale(loss_mss(g.features, ga.features, pts, mss_temperature), float(pts.size()) / float(n_points)));
    };
    add_view(gq, pair.xq_aug, pair.q_points);
    add_view(gs, pair.xs_aug, pair.s_points);
    l_ce = nn::add_scalars(ce);
    terms.push_back(l_ce);
  }
  const Var total = nn::add_scalars(terms);

  PairLoss out;
  out.l_mse = l_mse.value()[0];
  out.l_ce = l_ce.defined() ? l_ce.value()[0] : 0.0;
  if (with_grads) {
    nn::backward(total);
    for (const auto& p : params) out.grads.push_back(p.grad());
  }
  return out;
}

// ---------------------------------------------------------------------------
// loop

TrainResult train(const std::vector<Volume>& cohort, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (cohort.empty()) throw Error(ErrorCode::EmptyInput, "training cohort is empty");

  std::vector<Volume> normalized;
  std::vector<const Volume*> volumes;
  for (const auto& v : cohort) {
    if (v.domain() == IntensityDomain::RawHu) normalized.push_back(normalize_hu(v));
  }
  for (std::size_t i = 0, k = 0; i < cohort.size(); ++i) {
    volumes.push_back(cohort[i].domain() == IntensityDomain::RawHu ? &normalized[k++] : &cohort[i]);
  }
  for (const Volume* v : volumes) {
    for (int a = 0; a < 3; ++a) {
      const double reach = double(v->shape()[a] - config.patch_side) * v->spacing()[a];
      if (reach > config.r[a]) {
        throw Error(ErrorCode::InvalidArgument, "train config r: axis " + std::to_string(a) + " bound " +
                                                    format_double(config.r[a]) +
                                                    " mm is below the largest sampled offset " + format_double(reach) +
                                                    " mm");
      }
    }
  }

  TrainResult result;
  nn::Checkpoint& ckpt = result.checkpoint;
  if (options.resume) {
    ckpt = *options.resume;
    if (!(ckpt.weights.config == config.network_config())) {
      throw Error(ErrorCode::ShapeManifestMismatch, "resume checkpoint architecture differs from the train config");
    }
    if (!ckpt.adam) ckpt.adam = nn::AdamState::zeros_like(ckpt.weights.params);
  } else {
    ckpt.weights = nn::NetworkWeights::initialize(config.network_config(), mix_seed(config.seed, 1));
    ckpt.adam = nn::AdamState::zeros_like(ckpt.weights.params);
    ckpt.epoch = 0;
  }
  ckpt.r = config.r;
  ckpt.train_config = config.to_json();

  const nn::AdamConfig adam{config.learning_rate, 0.9, 0.999, 1e-8};
  const std::size_t n_items = volumes.size() * std::size_t(config.pairs_per_volume);
  const int first_epoch = ckpt.epoch + 1;
  for (int epoch = first_epoch; epoch < first_epoch + config.epochs; ++epoch) {
    const std::uint64_t epoch_seed = mix_seed(config.seed, 0x10000ull + std::uint64_t(epoch));
    std::vector<std::size_t> order(n_items);
    for (std::size_t i = 0; i < n_items; ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(epoch_seed);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double sum_mse = 0.0, sum_ce = 0.0;
    for (std::size_t start = 0; start < n_items; start += std::size_t(config.batch_size)) {
      const std::size_t count = std::min<std::size_t>(std::size_t(config.batch_size), n_items - start);
      std::vector<PairLoss> losses(count);
      parallel_for(count, options.jobs, [&](std::size_t i) {
        const std::size_t item = order[start + i];
        const Volume& vol = *volumes[item % volumes.size()];
        const SamplePair pair = sample_training_pair(vol, config, mix_seed(epoch_seed, start + i));
        losses[i] = pair_loss(pair, ckpt.weights, config.r, true, config.mss_temperature, config.mse_weight);
      });
      std::vector<Tensor> grads = losses[0].grads;
      double batch_mse = losses[0].l_mse, batch_ce = losses[0].l_ce;
      for (std::size_t i = 1; i < count; ++i) {
        for (std::size_t p = 0; p < grads.size(); ++p) {
          Tensor& g = grads[p];
          const Tensor& o = losses[i].grads[p];
          for (std::size_t k = 0; k < g.numel(); ++k) g[k] += o[k];
        }
        batch_mse += losses[i].l_mse;
        batch_ce += losses[i].l_ce;
      }
      const float inv = 1.0f / float(count);
      for (auto& g : grads)
        for (auto& v : g.values()) v *= inv;
      const double batch_total = (batch_mse + batch_ce) / double(count);
      if (!std::isfinite(batch_total)) {
        throw Error(ErrorCode::NanLoss, "non-finite loss at epoch " + std::to_string(epoch));
      }
      nn::adam_step(ckpt.weights.params, grads, *ckpt.adam, adam);
      sum_mse += batch_mse;
      sum_ce += batch_ce;
    }
    if (!ckpt.weights.all_finite()) throw Error(ErrorCode::NanLoss, "non-finite weights at epoch " + std::to_string(epoch));
    EpochLoss row;
    row.epoch = epoch;
    row.l_mse = sum_mse / double(n_items);
    row.l_ce = sum_ce / double(n_items);
    row.l_total = loss_total(row.l_mse, row.l_ce);
    result.history.push_back(row);
    ckpt.epoch = epoch;
    if (options.on_epoch) options.on_epoch(row, ckpt);
  }
  return result;
}

std::string loss_history_csv(const std::vector<EpochLoss>& history) {
  std::ostringstream os;
  os << "epoch,l_mse,l_ce,l_total\n";
  for (const auto& row : history) {
    os << row.epoch << ',' << format_double(row.l_mse) << ',' << format_double(row.l_ce) << ','
       << format_double(row.l_total) << '\n';
  }
  return os.str();
}

}  // namespace anatomap
