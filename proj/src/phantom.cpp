#include "anatomap/phantom.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <cstring>
#include <random>

#include "anatomap/util.hpp"

namespace anatomap {

// ---------------------------------------------------------------------------
// Mask

Mask::Mask(Shape3 shape) : shape_(shape), bits_((shape.count() + 63) / 64, 0) {}

void Mask::set(Voxel v, bool on) {
  const auto i = shape_.offset(v);
  if (on) {
    bits_[i >> 6] |= (std::uint64_t{1} << (i & 63));
  } else {
    bits_[i >> 6] &= ~(std::uint64_t{1} << (i & 63));
  }
}

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto w : bits_) n += std::size_t(std::popcount(w));
  return n;
}

std::size_t Mask::overlap(const Mask& other) const {
  if (!(shape_ == other.shape_)) throw Error(ErrorCode::GridMismatch, "mask grids differ");
  std::size_t n = 0;
  for (std::size_t i = 0; i < bits_.size(); ++i) n += std::size_t(std::popcount(bits_[i] & other.bits_[i]));
  return n;
}

std::vector<std::uint8_t> Mask::pack() const {
  std::vector<std::uint8_t> out((shape_.count() + 7) / 8, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::uint8_t(bits_[i / 8] >> (8 * (i % 8)));
  return out;
}

Mask Mask::unpack(Shape3 shape, const std::vector<std::uint8_t>& bytes) {
  Mask m(shape);
  if (bytes.size() != (shape.count() + 7) / 8) {
    throw Error(ErrorCode::SchemaMismatch, "packed mask size does not match shape");
  }
  for (std::size_t i = 0; i < bytes.size(); ++i) m.bits_[i / 8] |= std::uint64_t(bytes[i]) << (8 * (i % 8));
  // Clear padding bits beyond the voxel count.
  const std::size_t n = shape.count();
  if (n % 64) m.bits_.back() &= (std::uint64_t{1} << (n % 64)) - 1;
  return m;
}

// ---------------------------------------------------------------------------
// Spec

namespace {

const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::Ellipsoid: return "ellipsoid";
    case Primitive::Box: return "box";
    case Primitive::Tube: return "tube";
  }
  return "?";
}

Vec3 vec_from_json(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::InvalidSpec, field + ": expected [z, y, x]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

void PhantomSpec::validate() const {
  if (shape.z < 8 || shape.y < 8 || shape.x < 8) throw Error(ErrorCode::InvalidSpec, "shape: components must be >= 8");
  if (!(deformation_mm >= 0.0) || !std::isfinite(deformation_mm)) {
    throw Error(ErrorCode::InvalidSpec, "deformation_mm: must be finite and >= 0");
  }
  if (!(jitter_mm >= 0.0) || !std::isfinite(jitter_mm)) {
    throw Error(ErrorCode::InvalidSpec, "jitter_mm: must be finite and >= 0");
  }
  if (organs.empty()) throw Error(ErrorCode::InvalidSpec, "organs: at least one organ required");
  for (std::size_t i = 0; i < organs.size(); ++i) {
    const auto& o = organs[i];
    const std::string f = "organs[" + std::to_string(i) + "]";
    if (o.name.empty() || o.name.find_first_of("/\\ ") != std::string::npos) {
      throw Error(ErrorCode::InvalidSpec, f + ".name: must be nonempty without '/', '\\' or spaces");
    }
    for (std::size_t k = 0; k < i; ++k) {
      if (organs[k].name == o.name) throw Error(ErrorCode::InvalidSpec, f + ".name: duplicate '" + o.name + "'");
    }
    for (int a = 0; a < 3; ++a) {
      if (!(o.center[a] >= 0.0 && o.center[a] <= 1.0)) {
        throw Error(ErrorCode::InvalidSpec, f + ".center: must lie in [0,1]^3");
      }
      if (!(o.radii_mm[a] > 0.0) || !std::isfinite(o.radii_mm[a])) {
        throw Error(ErrorCode::InvalidSpec, f + ".radii_mm: must be positive");
      }
    }
    if (!(o.hu_min >= -1000.0 && o.hu_max <= 1500.0 && o.hu_min <= o.hu_max)) {
      throw Error(ErrorCode::InvalidSpec, f + ".hu: band must satisfy -1000 <= lo <= hi <= 1500");
    }
    if (o.tube_axis < 0 || o.tube_axis > 2) throw Error(ErrorCode::InvalidSpec, f + ".axis: must be z, y or x");
  }
}

nlohmann::ordered_json PhantomSpec::to_json() const {
  nlohmann::ordered_json j;
  j["shape"] = {shape.z, shape.y, shape.x};
  j["spacing"] = {spacing.z(), spacing.y(), spacing.x()};
  j["body_radii"] = {body_radii.z, body_radii.y, body_radii.x};
  j["body_hu"] = body_hu;
  j["texture_hu"] = texture_hu;
  j["deformation_mm"] = deformation_mm;
  j["jitter_mm"] = jitter_mm;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& o : organs) {
    nlohmann::ordered_json e;
    e["name"] = o.name;
    e["shape"] = primitive_name(o.primitive);
    if (o.primitive == Primitive::Tube) e["axis"] = std::string(1, "zyx"[o.tube_axis]);
    e["center"] = {o.center.z, o.center.y, o.center.x};
    e["radii_mm"] = {o.radii_mm.z, o.radii_mm.y, o.radii_mm.x};
    e["hu"] = {o.hu_min, o.hu_max};
    arr.push_back(e);
  }
  j["organs"] = arr;
  return j;
}

PhantomSpec PhantomSpec::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> kKeys{"shape",     "spacing",        "body_radii", "body_hu",
                                              "texture_hu", "deformation_mm", "jitter_mm",  "organs"};
  static const std::vector<std::string> kOrganKeys{"name", "shape", "axis", "center", "radii_mm", "hu"};
  if (!j.is_object()) throw Error(ErrorCode::InvalidSpec, "spec: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(kKeys.begin(), kKeys.end(), it.key()) == kKeys.end()) {
      throw Error(ErrorCode::InvalidSpec, it.key() + ": unknown key");
    }
  }
  PhantomSpec s = default_spec();
  try {
    if (j.contains("shape")) {
      const Vec3 v = vec_from_json(j["shape"], "shape");
      s.shape = {int(v.z), int(v.y), int(v.x)};
    }
    if (j.contains("spacing")) {
      const Vec3 v = vec_from_json(j["spacing"], "spacing");
      try {
        s.spacing = Spacing(v.z, v.y, v.x);
      } catch (const Error&) {
        throw Error(ErrorCode::InvalidSpec, "spacing: components must be positive and finite");
      }
    }
    if (j.contains("body_radii")) s.body_radii = vec_from_json(j["body_radii"], "body_radii");
    if (j.contains("body_hu")) s.body_hu = j["body_hu"].get<double>();
    if (j.contains("texture_hu")) s.texture_hu = j["texture_hu"].get<double>();
    if (j.contains("deformation_mm")) s.deformation_mm = j["deformation_mm"].get<double>();
    if (j.contains("jitter_mm")) s.jitter_mm = j["jitter_mm"].get<double>();
    if (j.contains("organs")) {
      s.organs.clear();
      const auto& arr = j["organs"];
      if (!arr.is_array()) throw Error(ErrorCode::InvalidSpec, "organs: expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& e = arr[i];
        const std::string f = "organs[" + std::to_string(i) + "]";
        for (auto it = e.begin(); it != e.end(); ++it) {
          if (std::find(kOrganKeys.begin(), kOrganKeys.end(), it.key()) == kOrganKeys.end()) {
            throw Error(ErrorCode::InvalidSpec, f + "." + it.key() + ": unknown key");
          }
        }
        OrganTemplate o;
        if (!e.contains("name")) throw Error(ErrorCode::InvalidSpec, f + ".name: missing");
        o.name = e["name"].get<std::string>();
        const std::string prim = e.value("shape", std::string("ellipsoid"));
        if (prim == "ellipsoid") {
          o.primitive = Primitive::Ellipsoid;
        } else if (prim == "box") {
          o.primitive = Primitive::Box;
        } else if (prim == "tube") {
          o.primitive = Primitive::Tube;
        } else {
          throw Error(ErrorCode::InvalidSpec, f + ".shape: unknown primitive '" + prim + "'");
        }
        const std::string axis = e.value("axis", std::string("z"));
        if (axis.size() != 1 || std::string("zyx").find(axis[0]) == std::string::npos) {
          throw Error(ErrorCode::InvalidSpec, f + ".axis: must be z, y or x");
        }
        o.tube_axis = int(std::string("zyx").find(axis[0]));
        if (!e.contains("center")) throw Error(ErrorCode::InvalidSpec, f + ".center: missing");
        o.center = vec_from_json(e["center"], f + ".center");
        if (!e.contains("radii_mm")) throw Error(ErrorCode::InvalidSpec, f + ".radii_mm: missing");
        o.radii_mm = vec_from_json(e["radii_mm"], f + ".radii_mm");
        if (!e.contains("hu") || !e["hu"].is_array() || e["hu"].size() != 2) {
          throw Error(ErrorCode::InvalidSpec, f + ".hu: expected [lo, hi]");
        }
        o.hu_min = e["hu"][0].get<double>();
        o.hu_max = e["hu"][1].get<double>();
        s.organs.push_back(o);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("spec: ") + e.what());
  }
  s.validate();
  return s;
}

PhantomSpec PhantomSpec::default_spec() {
  PhantomSpec s;
  auto organ = [](std::string name, Primitive p, Vec3 c, Vec3 r, double lo, double hi, int axis = 0) {
    OrganTemplate o;
    o.name = std::move(name);
    o.primitive = p;
    o.center = c;
    o.radii_mm = r;
    o.hu_min = lo;
    o.hu_max = hi;
    o.tube_axis = axis;
    return o;
  };
  using P = Primitive;
  s.organs = {
      organ("liver", P::Ellipsoid, {0.42, 0.45, 0.31}, {30, 26, 34}, 55, 70),
      organ("spleen", P::Ellipsoid, {0.38, 0.55, 0.72}, {16, 14, 12}, 95, 110),
      organ("kidney_l", P::Ellipsoid, {0.60, 0.66, 0.72}, {18, 11, 10}, 125, 140),
      organ("kidney_r", P::Ellipsoid, {0.64, 0.67, 0.32}, {18, 11, 10}, 150, 165),
      organ("spine", P::Tube, {0.50, 0.80, 0.50}, {40, 9, 9}, 650, 800, 0),
      organ("bladder", P::Box, {0.84, 0.45, 0.50}, {12, 15, 18}, 0, 15),
      organ("ball", P::Ellipsoid, {0.22, 0.40, 0.62}, {9, 9, 9}, 180, 200),
      organ("aorta", P::Tube, {0.55, 0.60, 0.55}, {30, 6, 6}, 220, 260, 0),
  };
  return s;
}

// ---------------------------------------------------------------------------
// Extreme points and segmentation

const char* to_string(ExtremeRole role) {
  switch (role) {
    case ExtremeRole::ZMin: return "z_min";
    case ExtremeRole::ZMax: return "z_max";
    case ExtremeRole::XMin: return "x_min";
    case ExtremeRole::XMax: return "x_max";
    case ExtremeRole::YMin: return "y_min";
    case ExtremeRole::YMax: return "y_max";
  }
  return "?";
}

ExtremeRole extreme_role_from_string(const std::string& s) {
  for (auto r : kExtremeRoles)
    if (s == to_string(r)) return r;
  throw Error(ErrorCode::SchemaMismatch, "unknown extreme role '" + s + "'");
}

namespace {

int role_axis(ExtremeRole r) {
  switch (r) {
    case ExtremeRole::ZMin:
    case ExtremeRole::ZMax: return 0;
    case ExtremeRole::YMin:
    case ExtremeRole::YMax: return 1;
    default: return 2;
  }
}

bool role_is_max(ExtremeRole r) {
  return r == ExtremeRole::ZMax || r == ExtremeRole::XMax || r == ExtremeRole::YMax;
}

}  // namespace

ExtremePoints mask_extremes(const Mask& mask, int z_lo, int z_hi) {
  const Shape3 s = mask.shape();
  z_lo = std::max(z_lo, 0);
  z_hi = std::min(z_hi, s.z - 1);
  std::vector<Voxel> voxels;
  for (int z = z_lo; z <= z_hi; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x)
        if (mask.get({z, y, x})) voxels.push_back({z, y, x});
  if (voxels.empty()) throw Error(ErrorCode::EmptyInput, "extreme points of an empty mask");
  ExtremePoints out{};
  for (std::size_t r = 0; r < 6; ++r) {
    const ExtremeRole role = kExtremeRoles[r];
    const int axis = role_axis(role);
    int best = role_is_max(role) ? std::numeric_limits<int>::min() : std::numeric_limits<int>::max();
    for (const auto& v : voxels) best = role_is_max(role) ? std::max(best, v[axis]) : std::min(best, v[axis]);
    Vec3 mean{};
    std::size_t n = 0;
    for (const auto& v : voxels)
      if (v[axis] == best) {
        mean = mean + to_vec(v);
        ++n;
      }
    mean = mean * (1.0 / double(n));
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& v : voxels) {  // z-major order: first hit is lexicographically smallest
      if (v[axis] != best) continue;
      const Vec3 d = to_vec(v) - mean;
      const double d2 = d.z * d.z + d.y * d.y + d.x * d.x;
      if (d2 < best_d) {
        best_d = d2;
        out[r] = v;
      }
    }
  }
  return out;
}

ExtremePoints mask_extremes(const Mask& mask) { return mask_extremes(mask, 0, mask.shape().z - 1); }

int segment_count(double span_mm, double interval_mm) {
  if (!(interval_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "segment interval must be positive");
  return std::max(1, int(std::floor(span_mm / interval_mm + 1e-9)));
}

namespace {

std::pair<int, int> z_range(const Mask& mask) {
  const Shape3 s = mask.shape();
  int lo = s.z, hi = -1;
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y && !(lo <= z && z <= hi); ++y)
      for (int x = 0; x < s.x; ++x)
        if (mask.get({z, y, x})) {
          lo = std::min(lo, z);
          hi = std::max(hi, z);
          break;
        }
  if (hi < 0) throw Error(ErrorCode::EmptyInput, "empty mask has no z-range");
  return {lo, hi};
}

}  // namespace

double z_span_mm(const Mask& mask, const Spacing& spacing) {
  const auto [lo, hi] = z_range(mask);
  return double(hi - lo + 1) * spacing.z();
}

std::vector<std::pair<int, int>> segment_ranges(const Mask& mask, int m) {
  const auto [lo, hi] = z_range(mask);
  const int n = hi - lo + 1;
  m = std::clamp(m, 1, n);
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < m; ++i) out.emplace_back(lo + i * n / m, lo + (i + 1) * n / m - 1);
  return out;
}

std::vector<ExtremePoints> segment_extremes(const Mask& mask, int m) {
  std::vector<ExtremePoints> out;
  for (const auto& [lo, hi] : segment_ranges(mask, m)) out.push_back(mask_extremes(mask, lo, hi));
  return out;
}

const OrganTruth& GroundTruth::organ(const std::string& name) const {
  for (const auto& o : organs)
    if (o.name == name) return o;
  throw Error(ErrorCode::SchemaMismatch, "ground truth has no organ '" + name + "'");
}

// ---------------------------------------------------------------------------
// Generation

namespace {

/// Sum of a few random low-frequency plane waves; |value| <= amplitude.
class SmoothField {
 public:
  SmoothField(std::mt19937_64& rng, double amplitude, double wavelength_mm, int modes = 3) : amp_(amplitude) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < modes; ++k) {
      Vec3 dir{gauss(rng), gauss(rng), gauss(rng)};
      const double n = std::max(dir.norm(), 1e-9);
      const double freq = 2.0 * std::numbers::pi / wavelength_mm * (0.5 + unit(rng));
      waves_.push_back({dir * (freq / n), 2.0 * std::numbers::pi * unit(rng)});
    }
  }

  double operator()(const Vec3& p) const {
    if (amp_ == 0.0) return 0.0;
    double acc = 0.0;
    for (const auto& w : waves_) acc += std::sin(w.k.z * p.z + w.k.y * p.y + w.k.x * p.x + w.phase);
    return amp_ * acc / double(waves_.size());
  }

 private:
  struct Wave {
    Vec3 k;
    double phase;
  };
  double amp_;
  std::vector<Wave> waves_;
};

bool inside(const OrganTemplate& o, const Vec3& d) {
  const Vec3& r = o.radii_mm;
  switch (o.primitive) {
    case Primitive::Ellipsoid:
      return (d.z * d.z) / (r.z * r.z) + (d.y * d.y) / (r.y * r.y) + (d.x * d.x) / (r.x * r.x) <= 1.0;
    case Primitive::Box:
      return std::abs(d.z) <= r.z && std::abs(d.y) <= r.y && std::abs(d.x) <= r.x;
    case Primitive::Tube: {
      double q = 0.0;
      for (int a = 0; a < 3; ++a)
        if (a != o.tube_axis) q += d[a] * d[a] / (r[a] * r[a]);
      return q <= 1.0 && std::abs(d[o.tube_axis]) <= r[o.tube_axis];
    }
  }
  return false;
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const Shape3 shape = spec.shape;
  const Spacing& e = spec.spacing;
  const Vec3 extent{shape.z * e.z(), shape.y * e.y(), shape.x * e.x()};
  const double wavelength = std::max({extent.z, extent.y, extent.x});

  // Organ levels and shading are shared by every subject; only placement,
  // warp and texture vary with the seed.
  std::mt19937_64 look_rng(0x6c6f6f6bULL);
  std::vector<double> levels;
  for (const auto& o : spec.organs) levels.push_back(o.hu_min + (o.hu_max - o.hu_min) * unit(look_rng));
  SmoothField shading(look_rng, 15.0, wavelength);

  std::vector<Vec3> centers;
  for (const auto& o : spec.organs) {
    Vec3 c{o.center.z * extent.z, o.center.y * extent.y, o.center.x * extent.x};
    // Jitter is truncated at 2 sigma so a well-separated layout never collides.
    for (int a = 0; a < 3; ++a) {
      double g = gauss(rng);
      while (std::abs(g) > 2.0) g = gauss(rng);
      c[a] += spec.jitter_mm * g;
    }
    centers.push_back(c);
  }
  std::array<SmoothField, 3> warp{SmoothField(rng, spec.deformation_mm, wavelength),
                                  SmoothField(rng, spec.deformation_mm, wavelength),
                                  SmoothField(rng, spec.deformation_mm, wavelength)};
  std::mt19937_64 texture_rng(mix_seed(seed, 7));

  const Vec3 body_c{0.5 * extent.z, 0.5 * extent.y, 0.5 * extent.x};
  const Vec3 body_r{spec.body_radii.z * extent.z, spec.body_radii.y * extent.y, spec.body_radii.x * extent.x};

  Grid3 grid(shape, -1000.0f);
  GroundTruth truth;
  for (const auto& o : spec.organs) truth.organs.push_back({o.name, Mask(shape), {}});

  for (int z = 0; z < shape.z; ++z)
    for (int y = 0; y < shape.y; ++y)
      for (int x = 0; x < shape.x; ++x) {
        const Vec3 p = voxel_to_phys(Voxel{z, y, x}, e);
        const Vec3 q{p.z + warp[0](p), p.y + warp[1](p), p.x + warp[2](p)};
        const double noise = spec.texture_hu * gauss(texture_rng);
        const Vec3 db = q - body_c;
        const bool in_body = (db.z * db.z) / (body_r.z * body_r.z) + (db.y * db.y) / (body_r.y * body_r.y) +
                                 (db.x * db.x) / (body_r.x * body_r.x) <=
                             1.0;
        double hu = in_body ? spec.body_hu + shading(q) : -1000.0;
        for (std::size_t i = 0; i < spec.organs.size(); ++i) {
          if (inside(spec.organs[i], q - centers[i])) {
            hu = levels[i];
            truth.organs[i].mask.set({z, y, x});
          }
        }
        if (hu > -1000.0) hu += noise;
        grid.at(z, y, x) = float(std::clamp(hu, -1000.0, 1500.0));
      }

  for (std::size_t i = 0; i < truth.organs.size(); ++i) {
    if (truth.organs[i].mask.empty()) {
      throw Error(ErrorCode::InvalidSpec, "organs[" + std::to_string(i) + "]: '" + truth.organs[i].name +
                                              "' falls outside the volume");
    }
  }
  for (std::size_t i = 0; i < truth.organs.size(); ++i)
    for (std::size_t k = i + 1; k < truth.organs.size(); ++k) {
      const auto ov = truth.organs[i].mask.overlap(truth.organs[k].mask);
      const auto smaller = std::min(truth.organs[i].mask.count(), truth.organs[k].mask.count());
      if (double(ov) > 0.2 * double(smaller)) {
        throw Error(ErrorCode::OverlapError, "organs '" + truth.organs[i].name + "' and '" +
                                                 truth.organs[k].name + "' overlap by more than 20%");
      }
    }
  for (auto& o : truth.organs) o.extremes = mask_extremes(o.mask);
  return {Volume(std::move(grid), e, IntensityDomain::RawHu), std::move(truth)};
}

std::uint64_t subject_seed(std::uint64_t cohort_seed, std::size_t index) { return mix_seed(cohort_seed, index); }

std::vector<Phantom> generate_cohort(const PhantomSpec& spec, std::size_t count, std::uint64_t seed, int jobs) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "cohort count must be >= 1");
  std::vector<std::optional<Phantom>> slots(count);
  parallel_for(count, jobs, [&](std::size_t i) { slots[i] = generate_phantom(spec, subject_seed(seed, i)); });
  std::vector<Phantom> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::filesystem::path bits_path(const std::filesystem::path& header_path) {
  auto p = header_path;
  p.replace_extension(".bits");
  return p;
}

nlohmann::ordered_json voxel_json(Voxel v) { return {v.z, v.y, v.x}; }

Voxel voxel_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::SchemaMismatch, "expected [z, y, x]");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

}  // namespace

void write_mask(const Mask& mask, const Spacing& spacing, const std::filesystem::path& header_path) {
  nlohmann::ordered_json h;
  h["shape"] = {mask.shape().z, mask.shape().y, mask.shape().x};
  h["spacing"] = {spacing.z(), spacing.y(), spacing.x()};
  h["domain"] = "mask";
  h["encoding"] = "bits_lsb_first";
  write_text_file(header_path, h.dump(2) + "\n");
  const auto packed = mask.pack();
  write_file_bytes(bits_path(header_path), std::as_bytes(std::span(packed)));
}

Mask read_mask(const std::filesystem::path& header_path) {
  try {
    const auto h = nlohmann::json::parse(read_text_file(header_path));
    const auto s = h.at("shape").get<std::vector<int>>();
    if (s.size() != 3 || h.at("domain").get<std::string>() != "mask") {
      throw Error(ErrorCode::SchemaMismatch, header_path.string() + ": not a mask header");
    }
    const auto bytes = read_file_bytes(bits_path(header_path));
    std::vector<std::uint8_t> raw(bytes.size());
    std::memcpy(raw.data(), bytes.data(), bytes.size());
    return Mask::unpack({s[0], s[1], s[2]}, raw);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, header_path.string() + ": " + e.what());
  }
}

nlohmann::ordered_json ground_truth_json(const GroundTruth& truth, const std::string& stem) {
  nlohmann::ordered_json j;
  j["version"] = kVersion;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& o : truth.organs) {
    nlohmann::ordered_json e;
    e["name"] = o.name;
    e["mask"] = stem + "_mask_" + o.name + ".json";
    e["voxels"] = o.mask.count();
    nlohmann::ordered_json ex;
    for (std::size_t r = 0; r < 6; ++r) ex[to_string(kExtremeRoles[r])] = voxel_json(o.extremes[r]);
    e["extremes"] = ex;
    arr.push_back(e);
  }
  j["organs"] = arr;
  return j;
}

void write_ground_truth(const GroundTruth& truth, const Spacing& spacing, const std::filesystem::path& dir,
                        const std::string& stem) {
  for (const auto& o : truth.organs) write_mask(o.mask, spacing, dir / (stem + "_mask_" + o.name + ".json"));
  write_text_file(dir / (stem + "_gt.json"), ground_truth_json(truth, stem).dump(2) + "\n");
}

GroundTruth read_ground_truth(const std::filesystem::path& gt_json_path) {
  GroundTruth truth;
  try {
    const auto j = nlohmann::json::parse(read_text_file(gt_json_path));
    for (const auto& e : j.at("organs")) {
      OrganTruth o;
      o.name = e.at("name").get<std::string>();
      o.mask = read_mask(gt_json_path.parent_path() / e.at("mask").get<std::string>());
      const auto& ex = e.at("extremes");
      for (std::size_t r = 0; r < 6; ++r) o.extremes[r] = voxel_from_json(ex.at(to_string(kExtremeRoles[r])));
      truth.organs.push_back(std::move(o));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, gt_json_path.string() + ": " + e.what());
  }
  return truth;
}

}  // namespace anatomap
