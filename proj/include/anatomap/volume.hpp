#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "anatomap/geometry.hpp"

namespace anatomap {

/// Dense scalar field on a regular 3D grid, z-major storage.
class Grid3 {
 public:
  Grid3() = default;
  explicit Grid3(Shape3 shape, float fill = 0.0f);
  Grid3(Shape3 shape, std::vector<float> data);

  const Shape3& shape() const { return shape_; }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  std::vector<float>& storage() { return data_; }

  float at(Voxel v) const { return data_[shape_.offset(v)]; }
  float& at(Voxel v) { return data_[shape_.offset(v)]; }
  float at(int z, int y, int x) const { return at(Voxel{z, y, x}); }
  float& at(int z, int y, int x) { return at(Voxel{z, y, x}); }
  /// Out-of-range reads return zero.
  float at_or_zero(Voxel v) const { return shape_.contains(v) ? at(v) : 0.0f; }

  /// Trilinear interpolation at a continuous voxel coordinate; samples outside
  /// the grid contribute zero.
  float sample_trilinear(const Vec3& p) const;

  /// Axis-aligned cube of `size` whose index size/2 sits on `center`.
  /// Outside regions are zero.
  Grid3 crop(Voxel center, Shape3 size) const;

 private:
  Shape3 shape_{};
  std::vector<float> data_;
};

enum class IntensityDomain { RawHu, Normalized };

const char* to_string(IntensityDomain d);
IntensityDomain intensity_domain_from_string(const std::string& s);

class Volume {
 public:
  Volume() = default;
  Volume(Grid3 grid, Spacing spacing, IntensityDomain domain);

  const Shape3& shape() const { return grid_.shape(); }
  const Spacing& spacing() const { return spacing_; }
  IntensityDomain domain() const { return domain_; }
  const Grid3& grid() const { return grid_; }
  Grid3& grid() { return grid_; }
  float at(Voxel v) const { return grid_.at(v); }

  /// Physical extent along each axis (shape * spacing), mm.
  Vec3 extent_mm() const;

 private:
  Grid3 grid_;
  Spacing spacing_;
  IntensityDomain domain_ = IntensityDomain::RawHu;
};

/// Segmental linear map through (-1000,0) (-200,0.2) (200,0.8) (1500,1),
/// clamped outside the first and last control points.
float normalize_hu(float hu);
Volume normalize_hu(const Volume& volume);

struct Patch {
  Grid3 grid;
  /// Voxel of the source grid the patch is centred on (patch index size/2).
  Voxel centroid;
  Spacing spacing;

  const Shape3& size() const { return grid.shape(); }
  Voxel center_index() const { return grid.shape().center(); }
};

/// Zero-padded crop; side lengths must be divisible by 4 and fit the volume.
Patch extract_patch(const Volume& volume, Voxel center, Shape3 size);

struct AugmentParams {
  Vec3 rotation_deg{};
  double elastic_sigma_vox = 4.0;
  /// Peak magnitude of the smoothed displacement field, voxels.
  double elastic_magnitude_vox = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Sampling ranges for random augmentation. Defaults: rotation uniform in
/// +-10 deg per axis, elastic peak uniform in [0, 3] voxels smoothed with
/// sigma 4, additive Gaussian noise sigma 0.03.
struct AugmentRanges {
  double max_rotation_deg = 10.0;
  double max_elastic_vox = 3.0;
  double elastic_sigma_vox = 4.0;
  double noise_sigma = 0.03;
};

AugmentParams random_augment_params(std::uint64_t seed, const AugmentRanges& ranges = {});

/// Point map induced by an augmentation: c' = ctr + R (c - ctr) + u(c).
class AugmentTransform {
 public:
  AugmentTransform() = default;
  AugmentTransform(Shape3 domain, AugmentParams params);

  const AugmentParams& params() const { return params_; }
  const Shape3& domain() const { return domain_; }

  /// Location in the augmented patch of source point `c`.
  Vec3 map_point(const Vec3& c) const;
  /// Approximate inverse, samples the displacement at the target point.
  Vec3 inverse_map_point(const Vec3& c_aug) const;
  /// Displacement at a continuous coordinate (trilinear, zero outside).
  Vec3 displacement(const Vec3& p) const;

 private:
  Shape3 domain_{};
  AugmentParams params_{};
  std::array<double, 9> rot_{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<Grid3, 3> field_;
  bool has_field_ = false;
};

struct AugmentedPatch {
  Patch patch;
  AugmentTransform transform;
};

AugmentedPatch augment_patch(const Patch& patch, const AugmentParams& params);
AugmentedPatch augment_patch(const Patch& patch, std::uint64_t rng_seed);

/// VOL1: `<stem>.json` header plus `<stem>.raw` little-endian float32, z-major.
void write_vol1(const Volume& volume, const std::filesystem::path& header_path);
Volume read_vol1(const std::filesystem::path& header_path);
std::filesystem::path vol1_raw_path(const std::filesystem::path& header_path);

}  // namespace anatomap
