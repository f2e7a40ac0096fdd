#include "anatomap/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <cstring>
#include <random>

#include <json.hpp>

#include "anatomap/util.hpp"

namespace anatomap {

static_assert(std::endian::native == std::endian::little, "raw formats assume a little-endian host");

// ---------------------------------------------------------------------------
// geometry

Voxel Shape3::clamp(Voxel v) const {
  return {std::clamp(v.z, 0, z - 1), std::clamp(v.y, 0, y - 1), std::clamp(v.x, 0, x - 1)};
}

Spacing::Spacing(double z, double y, double x) : v_{z, y, x} {
  for (double e : v_) {
    if (!(e > 0.0) || !std::isfinite(e)) {
      throw Error(ErrorCode::InvalidArgument, "spacing components must be positive and finite");
    }
  }
}

Vec3 voxel_to_phys(Voxel idx, const Spacing& spacing) { return voxel_to_phys(to_vec(idx), spacing); }

Vec3 voxel_to_phys(const Vec3& idx, const Spacing& spacing) {
  return {idx.z * spacing.z(), idx.y * spacing.y(), idx.x * spacing.x()};
}

int round_half_down(double v) { return static_cast<int>(std::ceil(v - 0.5)); }
int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

Voxel phys_to_voxel(const Vec3& mm, const Spacing& spacing) {
  return {round_half_down(mm.z / spacing.z()), round_half_down(mm.y / spacing.y()),
          round_half_down(mm.x / spacing.x())};
}

// ---------------------------------------------------------------------------
// Grid3

Grid3::Grid3(Shape3 shape, float fill) : shape_(shape), data_(shape.count(), fill) {
  if (shape.z < 1 || shape.y < 1 || shape.x < 1) {
    throw Error(ErrorCode::InvalidArgument, "grid shape components must be >= 1");
  }
}

Grid3::Grid3(Shape3 shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (shape.z < 1 || shape.y < 1 || shape.x < 1) {
    throw Error(ErrorCode::InvalidArgument, "grid shape components must be >= 1");
  }
  if (data_.size() != shape.count()) {
    throw Error(ErrorCode::ShapeMismatch, "grid data length does not match shape");
  }
}

float Grid3::sample_trilinear(const Vec3& p) const {
  const double fz = std::floor(p.z), fy = std::floor(p.y), fx = std::floor(p.x);
  const int z0 = int(fz), y0 = int(fy), x0 = int(fx);
  const double tz = p.z - fz, ty = p.y - fy, tx = p.x - fx;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const double wz = dz ? tz : 1.0 - tz;
    if (wz == 0.0) continue;
    for (int dy = 0; dy < 2; ++dy) {
      const double wy = dy ? ty : 1.0 - ty;
      if (wy == 0.0) continue;
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? tx : 1.0 - tx;
        if (wx == 0.0) continue;
        acc += wz * wy * wx * at_or_zero({z0 + dz, y0 + dy, x0 + dx});
      }
    }
  }
  return static_cast<float>(acc);
}

Grid3 Grid3::crop(Voxel center, Shape3 size) const {
  Grid3 out(size, 0.0f);
  const Voxel start = center - size.center();
  const int z_lo = std::max(0, -start.z), z_hi = std::min(size.z, shape_.z - start.z);
  const int y_lo = std::max(0, -start.y), y_hi = std::min(size.y, shape_.y - start.y);
  const int x_lo = std::max(0, -start.x), x_hi = std::min(size.x, shape_.x - start.x);
  for (int z = z_lo; z < z_hi; ++z) {
    for (int y = y_lo; y < y_hi; ++y) {
      if (x_lo >= x_hi) continue;
      const float* src = &data_[shape_.offset({start.z + z, start.y + y, start.x + x_lo})];
      float* dst = &out.data_[size.offset({z, y, x_lo})];
      std::copy(src, src + (x_hi - x_lo), dst);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Volume

const char* to_string(IntensityDomain d) { return d == IntensityDomain::RawHu ? "raw_hu" : "normalized"; }

IntensityDomain intensity_domain_from_string(const std::string& s) {
  if (s == "raw_hu") return IntensityDomain::RawHu;
  if (s == "normalized") return IntensityDomain::Normalized;
  throw Error(ErrorCode::SchemaMismatch, "unknown intensity domain '" + s + "'");
}

Volume::Volume(Grid3 grid, Spacing spacing, IntensityDomain domain)
    : grid_(std::move(grid)), spacing_(spacing), domain_(domain) {
  if (domain_ == IntensityDomain::Normalized) {
    for (float v : grid_.data()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw Error(ErrorCode::InvalidArgument, "normalized volume values must lie in [0, 1]");
      }
    }
  }
}

Vec3 Volume::extent_mm() const {
  return {shape().z * spacing_.z(), shape().y * spacing_.y(), shape().x * spacing_.x()};
}

float normalize_hu(float hu) {
  constexpr std::array<double, 4> kHu{-1000.0, -200.0, 200.0, 1500.0};
  constexpr std::array<double, 4> kOut{0.0, 0.2, 0.8, 1.0};
  if (!(hu > kHu[0])) return 0.0f;  // also maps NaN to 0
  if (hu >= kHu[3]) return 1.0f;
  std::size_t seg = 0;
  while (hu > kHu[seg + 1]) ++seg;
  const double t = (double(hu) - kHu[seg]) / (kHu[seg + 1] - kHu[seg]);
  return static_cast<float>(kOut[seg] + t * (kOut[seg + 1] - kOut[seg]));
}

Volume normalize_hu(const Volume& volume) {
  if (volume.domain() != IntensityDomain::RawHu) {
    throw Error(ErrorCode::InvalidArgument, "normalize_hu expects a raw_hu volume");
  }
  Grid3 out(volume.shape());
  auto src = volume.grid().data();
  auto dst = out.data();
  std::transform(src.begin(), src.end(), dst.begin(), [](float v) { return normalize_hu(v); });
  return Volume(std::move(out), volume.spacing(), IntensityDomain::Normalized);
}

Patch extract_patch(const Volume& volume, Voxel center, Shape3 size) {
  const Shape3& vs = volume.shape();
  if (size.z > vs.z || size.y > vs.y || size.x > vs.x) {
    throw Error(ErrorCode::SizeTooLarge, "patch size exceeds volume shape");
  }
  if (size.z % 4 || size.y % 4 || size.x % 4 || size.z < 4 || size.y < 4 || size.x < 4) {
    throw Error(ErrorCode::InvalidArgument, "patch sides must be positive multiples of 4");
  }
  if (!vs.contains(center)) {
    throw Error(ErrorCode::InvalidArgument, "patch centre lies outside the volume");
  }
  return Patch{volume.grid().crop(center, size), center, volume.spacing()};
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

std::array<double, 9> rotation_matrix(const Vec3& deg) {
  const double a = deg.z * std::numbers::pi / 180.0;  // about z, acts on (y, x)
  const double b = deg.y * std::numbers::pi / 180.0;  // about y, acts on (z, x)
  const double c = deg.x * std::numbers::pi / 180.0;  // about x, acts on (z, y)
  // Row-major 3x3 in (z, y, x) coordinates.
  const std::array<double, 9> rz{1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a)};
  const std::array<double, 9> ry{std::cos(b), 0, std::sin(b), 0, 1, 0, -std::sin(b), 0, std::cos(b)};
  const std::array<double, 9> rx{std::cos(c), -std::sin(c), 0, std::sin(c), std::cos(c), 0, 0, 0, 1};
  auto mul = [](const std::array<double, 9>& p, const std::array<double, 9>& q) {
    std::array<double, 9> r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r[i * 3 + j] += p[i * 3 + k] * q[k * 3 + j];
    return r;
  };
  return mul(rz, mul(ry, rx));
}

// In-place separable Gaussian blur with zero boundary.
void gaussian_blur(Grid3& g, double sigma) {
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(std::size_t(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i) kernel[std::size_t(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  const Shape3 s = g.shape();
  for (int axis = 0; axis < 3; ++axis) {
    Grid3 out(s, 0.0f);
    for (int z = 0; z < s.z; ++z)
      for (int y = 0; y < s.y; ++y)
        for (int x = 0; x < s.x; ++x) {
          double acc = 0.0;
          for (int k = -radius; k <= radius; ++k) {
            Voxel v{z, y, x};
            v[axis] += k;
            acc += kernel[std::size_t(k + radius)] * g.at_or_zero(v);
          }
          out.at(z, y, x) = float(acc);
        }
    g = std::move(out);
  }
}

}  // namespace

AugmentParams random_augment_params(std::uint64_t seed, const AugmentRanges& ranges) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(-ranges.max_rotation_deg, ranges.max_rotation_deg);
  std::uniform_real_distribution<double> magnitude(0.0, ranges.max_elastic_vox);
  AugmentParams p;
  p.rotation_deg.z = angle(rng);
  p.rotation_deg.y = angle(rng);
  p.rotation_deg.x = angle(rng);
  p.elastic_sigma_vox = ranges.elastic_sigma_vox;
  p.elastic_magnitude_vox = magnitude(rng);
  p.noise_sigma = ranges.noise_sigma;
  p.seed = rng();
  return p;
}

AugmentTransform::AugmentTransform(Shape3 domain, AugmentParams params)
    : domain_(domain), params_(params), rot_(rotation_matrix(params.rotation_deg)) {
  if (params_.elastic_magnitude_vox > 0.0) {
    std::mt19937_64 rng(mix_seed(params_.seed, 1));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& f : field_) {
      f = Grid3(domain, 0.0f);
      for (float& v : f.data()) v = float(gauss(rng));
      gaussian_blur(f, params_.elastic_sigma_vox);
    }
    double peak = 0.0;
    for (std::size_t i = 0; i < domain.count(); ++i) {
      const double m = std::sqrt(double(field_[0].data()[i]) * field_[0].data()[i] +
                                 double(field_[1].data()[i]) * field_[1].data()[i] +
                                 double(field_[2].data()[i]) * field_[2].data()[i]);
      peak = std::max(peak, m);
    }
    if (peak > 0.0) {
      const double scale = params_.elastic_magnitude_vox / peak;
      for (auto& f : field_)
        for (float& v : f.data()) v = float(v * scale);
      has_field_ = true;
    }
  }
}

Vec3 AugmentTransform::displacement(const Vec3& p) const {
  if (!has_field_) return {};
  return {field_[0].sample_trilinear(p), field_[1].sample_trilinear(p), field_[2].sample_trilinear(p)};
}

Vec3 AugmentTransform::map_point(const Vec3& c) const {
  const Vec3 ctr = to_vec(domain_.center());
  const Vec3 d = c - ctr;
  Vec3 out;
  for (int i = 0; i < 3; ++i) out[i] = ctr[i] + rot_[i * 3] * d.z + rot_[i * 3 + 1] * d.y + rot_[i * 3 + 2] * d.x;
  return out + displacement(c);
}

Vec3 AugmentTransform::inverse_map_point(const Vec3& c_aug) const {
  const Vec3 ctr = to_vec(domain_.center());
  const Vec3 d = c_aug - ctr - displacement(c_aug);
  Vec3 out;
  // R is orthonormal: inverse is the transpose.
  for (int i = 0; i < 3; ++i) out[i] = ctr[i] + rot_[i] * d.z + rot_[3 + i] * d.y + rot_[6 + i] * d.x;
  return out;
}

AugmentedPatch augment_patch(const Patch& patch, const AugmentParams& params) {
  AugmentTransform transform(patch.size(), params);
  const Shape3 s = patch.size();
  Grid3 out(s, 0.0f);
  std::mt19937_64 rng(mix_seed(params.seed, 2));
  std::normal_distribution<double> noise(0.0, params.noise_sigma > 0.0 ? params.noise_sigma : 1.0);
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x) {
        const Vec3 src = transform.inverse_map_point({double(z), double(y), double(x)});
        float v = patch.grid.sample_trilinear(src);
        if (params.noise_sigma > 0.0) v += float(noise(rng));
        out.at(z, y, x) = v;
      }
  return {Patch{std::move(out), patch.centroid, patch.spacing}, std::move(transform)};
}

AugmentedPatch augment_patch(const Patch& patch, std::uint64_t rng_seed) {
  return augment_patch(patch, random_augment_params(rng_seed));
}

// ---------------------------------------------------------------------------
// VOL1 IO

std::filesystem::path vol1_raw_path(const std::filesystem::path& header_path) {
  auto p = header_path;
  p.replace_extension(".raw");
  return p;
}

void write_vol1(const Volume& volume, const std::filesystem::path& header_path) {
  nlohmann::ordered_json h;
  h["shape"] = {volume.shape().z, volume.shape().y, volume.shape().x};
  h["spacing"] = {volume.spacing().z(), volume.spacing().y(), volume.spacing().x()};
  h["domain"] = to_string(volume.domain());
  write_text_file(header_path, h.dump(2) + "\n");
  auto data = volume.grid().data();
  write_file_bytes(vol1_raw_path(header_path), std::as_bytes(data));
}

Volume read_vol1(const std::filesystem::path& header_path) {
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(read_text_file(header_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, header_path.string() + ": " + e.what());
  }
  try {
    const auto shape_v = h.at("shape").get<std::vector<int>>();
    const auto spacing_v = h.at("spacing").get<std::vector<double>>();
    if (shape_v.size() != 3 || spacing_v.size() != 3) {
      throw Error(ErrorCode::SchemaMismatch, header_path.string() + ": shape/spacing must have 3 entries");
    }
    const Shape3 shape{shape_v[0], shape_v[1], shape_v[2]};
    const auto domain = intensity_domain_from_string(h.at("domain").get<std::string>());
    const auto bytes = read_file_bytes(vol1_raw_path(header_path));
    if (bytes.size() != shape.count() * sizeof(float)) {
      throw Error(ErrorCode::SchemaMismatch, header_path.string() + ": raw size does not match shape");
    }
    std::vector<float> data(shape.count());
    std::memcpy(data.data(), bytes.data(), bytes.size());
    return Volume(Grid3(shape, std::move(data)), Spacing(spacing_v[0], spacing_v[1], spacing_v[2]), domain);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, header_path.string() + ": " + e.what());
  }
}

}  // namespace anatomap
