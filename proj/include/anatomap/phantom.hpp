#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anatomap/volume.hpp"

namespace anatomap {

/// Binary mask on a voxel grid, stored one bit per voxel.
class Mask {
 public:
  Mask() = default;
  explicit Mask(Shape3 shape);

  const Shape3& shape() const { return shape_; }
  bool get(Voxel v) const {
    const auto i = shape_.offset(v);
    return (bits_[i >> 6] >> (i & 63)) & 1u;
  }
  bool get_or_false(Voxel v) const { return shape_.contains(v) && get(v); }
  void set(Voxel v, bool on = true);
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  /// Voxel count of the intersection; grids must match.
  std::size_t overlap(const Mask& other) const;

  /// LSB-first packing, z-major voxel order, ceil(n/8) bytes.
  std::vector<std::uint8_t> pack() const;
  static Mask unpack(Shape3 shape, const std::vector<std::uint8_t>& bytes);
  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  Shape3 shape_{};
  std::vector<std::uint64_t> bits_;
};

enum class Primitive { Ellipsoid, Box, Tube };

struct OrganTemplate {
  std::string name;
  Primitive primitive = Primitive::Ellipsoid;
  /// Tube long axis (0 = z, 1 = y, 2 = x); ignored for other primitives.
  int tube_axis = 0;
  /// Canonical centre in body coordinates, [0,1]^3 of the volume extent.
  Vec3 center{};
  /// Half-extent along each axis, mm.
  Vec3 radii_mm{};
  /// Intensity band, HU.
  double hu_min = 0.0;
  double hu_max = 0.0;
};

struct PhantomSpec {
  Shape3 shape{64, 64, 64};
  Spacing spacing{3.0, 3.0, 3.0};
  /// Body ellipsoid radii in body coordinates; the body sits at the centre.
  Vec3 body_radii{0.46, 0.36, 0.44};
  double body_hu = -80.0;
  /// Per-voxel Gaussian texture, HU.
  double texture_hu = 8.0;
  std::vector<OrganTemplate> organs;
  /// Peak amplitude of the smooth global deformation, mm.
  double deformation_mm = 4.0;
  /// Standard deviation of the per-organ placement jitter, mm.
  double jitter_mm = 6.0;

  /// Throws InvalidSpec naming the offending field.
  void validate() const;
  nlohmann::ordered_json to_json() const;
  static PhantomSpec from_json(const nlohmann::json& j);
  /// 64^3 at 3 mm with eight organs spanning 6-40 mm.
  static PhantomSpec default_spec();
};

/// Extreme-point roles in the order [z_min, z_max, x_min, x_max, y_min, y_max].
enum class ExtremeRole { ZMin = 0, ZMax, XMin, XMax, YMin, YMax };
inline constexpr std::array<ExtremeRole, 6> kExtremeRoles{ExtremeRole::ZMin, ExtremeRole::ZMax, ExtremeRole::XMin,
                                                          ExtremeRole::XMax, ExtremeRole::YMin, ExtremeRole::YMax};
const char* to_string(ExtremeRole role);
ExtremeRole extreme_role_from_string(const std::string& s);

using ExtremePoints = std::array<Voxel, 6>;

/// Six extreme points of a nonempty mask. Among the voxels attaining an
/// extreme, the one closest to their mean wins; remaining ties go to the
/// lexicographically smallest (z, y, x).
ExtremePoints mask_extremes(const Mask& mask);
/// Same, restricted to slices z in [z_lo, z_hi].
ExtremePoints mask_extremes(const Mask& mask, int z_lo, int z_hi);

/// Number of sub-patch segments for an organ spanning `span_mm` when sliced
/// every `interval_mm`: max(1, floor(span / interval)).
int segment_count(double span_mm, double interval_mm);

/// Physical z-extent of a mask: (z_max - z_min + 1) * spacing_z.
double z_span_mm(const Mask& mask, const Spacing& spacing);

/// Splits the mask's z-range into `m` contiguous, near-equal slabs and returns
/// their inclusive [lo, hi] slice ranges ordered by z.
std::vector<std::pair<int, int>> segment_ranges(const Mask& mask, int m);

/// Extreme points of each of the `m` segments, ordered by z.
std::vector<ExtremePoints> segment_extremes(const Mask& mask, int m);

struct OrganTruth {
  std::string name;
  Mask mask;
  ExtremePoints extremes{};
};

struct GroundTruth {
  std::vector<OrganTruth> organs;

  const OrganTruth& organ(const std::string& name) const;
};

struct Phantom {
  Volume volume;
  GroundTruth truth;
};

/// Deterministic in (spec, seed). Throws OverlapError when two organ masks
/// overlap by more than 20% of the smaller one, InvalidSpec when an organ
/// ends up empty.
Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// Subject i uses seed mix_seed(seed, i).
std::uint64_t subject_seed(std::uint64_t cohort_seed, std::size_t index);
std::vector<Phantom> generate_cohort(const PhantomSpec& spec, std::size_t count, std::uint64_t seed,
                                     int jobs = 1);

// Ground-truth persistence: `<stem>_gt.json` plus one bit-packed VOL1-style
// mask per organ (`<stem>_mask_<organ>.json` / `.bits`).
void write_mask(const Mask& mask, const Spacing& spacing, const std::filesystem::path& header_path);
Mask read_mask(const std::filesystem::path& header_path);
nlohmann::ordered_json ground_truth_json(const GroundTruth& truth, const std::string& stem);
void write_ground_truth(const GroundTruth& truth, const Spacing& spacing, const std::filesystem::path& dir,
                        const std::string& stem);
GroundTruth read_ground_truth(const std::filesystem::path& gt_json_path);

}  // namespace anatomap
