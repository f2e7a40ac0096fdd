#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "anatomap/locate.hpp"
#include "anatomap/phantom.hpp"

namespace anatomap {

/// Inclusive voxel-index box.
struct BBox3D {
  int z_min = 0, z_max = 0;
  int x_min = 0, x_max = 0;
  int y_min = 0, y_max = 0;
  Spacing spacing;

  bool valid() const { return z_min <= z_max && x_min <= x_max && y_min <= y_max; }
  std::size_t voxel_count() const;
  BBox3D clamped(Shape3 grid) const;
  friend bool operator==(const BBox3D&, const BBox3D&) = default;
};

struct WplBox {
  BBox3D box;
  /// Some axis has zero span; the box is kept with min == max there.
  bool degenerate = false;
};

/// Componentwise min/max of any nonempty point set.
BBox3D points_box(std::span<const Voxel> points, const Spacing& spacing);

/// Tight box around six extreme points.
WplBox wpl_box(const std::vector<Voxel>& points, const Spacing& spacing);

/// One box per group of six consecutive points, ordered by z (then by group).
/// Throws GroupingError when points.size() != 6m.
std::vector<BBox3D> spl_boxes(const std::vector<Voxel>& points, int m, const Spacing& spacing);

/// Tight box of a nonempty mask.
BBox3D mask_box(const Mask& mask, const Spacing& spacing);

/// Inclusive 2D rectangle on one axial slice.
struct Rect2D {
  int x0 = 0, x1 = 0;
  int y0 = 0, y1 = 0;

  std::size_t area() const { return std::size_t(x1 - x0 + 1) * std::size_t(y1 - y0 + 1); }
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  friend bool operator==(const Rect2D&, const Rect2D&) = default;
};

struct SlicePrompt {
  int z = 0;
  Rect2D box;
  friend bool operator==(const SlicePrompt&, const SlicePrompt&) = default;
};

struct PromptSet {
  std::string organ;
  LocalizationMode mode = LocalizationMode::Wpl;
  /// SPL slicing interval, mm (unused for WPL).
  double n_mm = 0.0;
  int margin_px = 0;
  Shape3 grid{};
  std::vector<SlicePrompt> slices;  // ascending z, one per slice
  /// Free-form provenance written under "meta" (version, config hash, ...).
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

/// Per-slice xy-projection of every box, grown by margin_px per side then
/// clamped to the slice; boxes sharing a slice merge into their union
/// rectangle.
PromptSet slice_prompts(const std::vector<BBox3D>& boxes, int margin_px, Shape3 grid);

/// Ground-truth mask restricted to the union of the prompt rectangles.
/// Throws GridMismatch when the prompt grid differs from the mask grid.
Mask box_clip_segment(const Mask& ground_truth, const PromptSet& prompts);

/// Tight per-slice rectangles of a mask.
std::map<int, Rect2D> mask_slice_boxes(const Mask& mask);

nlohmann::ordered_json prompt_set_json(const PromptSet& prompts);
PromptSet prompt_set_from_json(const nlohmann::ordered_json& j);
void export_prompts(const PromptSet& prompts, const std::filesystem::path& path);
PromptSet import_prompts(const std::filesystem::path& path);

}  // namespace anatomap
