#include "anatomap/prompt.hpp"

#include <algorithm>
#include <limits>

#include "anatomap/util.hpp"

namespace anatomap {

std::size_t BBox3D::voxel_count() const {
  if (!valid()) return 0;
  return std::size_t(z_max - z_min + 1) * std::size_t(y_max - y_min + 1) * std::size_t(x_max - x_min + 1);
}

BBox3D BBox3D::clamped(Shape3 grid) const {
  BBox3D b = *this;
  b.z_min = std::clamp(z_min, 0, grid.z - 1);
  b.z_max = std::clamp(z_max, 0, grid.z - 1);
  b.y_min = std::clamp(y_min, 0, grid.y - 1);
  b.y_max = std::clamp(y_max, 0, grid.y - 1);
  b.x_min = std::clamp(x_min, 0, grid.x - 1);
  b.x_max = std::clamp(x_max, 0, grid.x - 1);
  return b;
}

namespace {

BBox3D box_of(std::span<const Voxel> points, const Spacing& spacing) {
  BBox3D b;
  b.spacing = spacing;
  b.z_min = b.y_min = b.x_min = std::numeric_limits<int>::max();
  b.z_max = b.y_max = b.x_max = std::numeric_limits<int>::min();
  for (const Voxel& p : points) {
    b.z_min = std::min(b.z_min, p.z);
    b.z_max = std::max(b.z_max, p.z);
    b.y_min = std::min(b.y_min, p.y);
    b.y_max = std::max(b.y_max, p.y);
    b.x_min = std::min(b.x_min, p.x);
    b.x_max = std::max(b.x_max, p.x);
  }
  return b;
}

}  // namespace

BBox3D points_box(std::span<const Voxel> points, const Spacing& spacing) {
  if (points.empty()) throw Error(ErrorCode::EmptyInput, "no points to box");
  return box_of(points, spacing);
}

namespace {

Rect2D merge(const Rect2D& a, const Rect2D& b) {
  return {std::min(a.x0, b.x0), std::max(a.x1, b.x1), std::min(a.y0, b.y0), std::max(a.y1, b.y1)};
}

}  // namespace

WplBox wpl_box(const std::vector<Voxel>& points, const Spacing& spacing) {
  if (points.size() != 6) {
    throw Error(ErrorCode::GroupingError, "a WPL box needs 6 points, got " + std::to_string(points.size()));
  }
  WplBox out{box_of(points, spacing), false};
  out.degenerate = out.box.z_min == out.box.z_max || out.box.y_min == out.box.y_max || out.box.x_min == out.box.x_max;
  return out;
}

std::vector<BBox3D> spl_boxes(const std::vector<Voxel>& points, int m, const Spacing& spacing) {
  if (m < 1 || points.size() != 6 * std::size_t(m)) {
    throw Error(ErrorCode::GroupingError, "SPL with m=" + std::to_string(m) + " needs " + std::to_string(6 * m) +
                                              " points, got " + std::to_string(points.size()));
  }
  std::vector<BBox3D> boxes;
  for (int s = 0; s < m; ++s) {
    boxes.push_back(box_of(std::span<const Voxel>(points).subspan(std::size_t(s) * 6, 6), spacing));
  }
  std::stable_sort(boxes.begin(), boxes.end(), [](const BBox3D& a, const BBox3D& b) {
    return a.z_min != b.z_min ? a.z_min < b.z_min : a.z_max < b.z_max;
  });
  return boxes;
}

BBox3D mask_box(const Mask& mask, const Spacing& spacing) {
  const auto ex = mask_extremes(mask);
  return box_of(ex, spacing);
}

PromptSet slice_prompts(const std::vector<BBox3D>& boxes, int margin_px, Shape3 grid) {
  if (margin_px < 0) throw Error(ErrorCode::InvalidArgument, "margin_px must be >= 0");
  std::map<int, Rect2D> per_slice;
  for (const auto& raw : boxes) {
    if (!raw.valid()) throw Error(ErrorCode::InvalidArgument, "box has min > max");
    const BBox3D b = raw.clamped(grid);
    const Rect2D r{std::clamp(b.x_min - margin_px, 0, grid.x - 1), std::clamp(b.x_max + margin_px, 0, grid.x - 1),
                   std::clamp(b.y_min - margin_px, 0, grid.y - 1), std::clamp(b.y_max + margin_px, 0, grid.y - 1)};
    for (int z = b.z_min; z <= b.z_max; ++z) {
      auto [it, inserted] = per_slice.emplace(z, r);
      if (!inserted) it->second = merge(it->second, r);
    }
  }
  PromptSet out;
  out.margin_px = margin_px;
  out.grid = grid;
  for (const auto& [z, r] : per_slice) out.slices.push_back({z, r});
  return out;
}

Mask box_clip_segment(const Mask& ground_truth, const PromptSet& prompts) {
  const Shape3& s = ground_truth.shape();
  if (!(prompts.grid == s)) throw Error(ErrorCode::GridMismatch, "prompt grid differs from the mask grid");
  Mask out(s);
  for (const auto& sp : prompts.slices) {
    if (sp.z < 0 || sp.z >= s.z) continue;
    for (int y = sp.box.y0; y <= sp.box.y1; ++y)
      for (int x = sp.box.x0; x <= sp.box.x1; ++x) {
        const Voxel v{sp.z, y, x};
        if (s.contains(v) && ground_truth.get(v)) out.set(v);
      }
  }
  return out;
}

std::map<int, Rect2D> mask_slice_boxes(const Mask& mask) {
  std::map<int, Rect2D> out;
  const Shape3& s = mask.shape();
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x) {
        if (!mask.get({z, y, x})) continue;
        auto [it, inserted] = out.emplace(z, Rect2D{x, x, y, y});
        if (!inserted) it->second = merge(it->second, Rect2D{x, x, y, y});
      }
  return out;
}

nlohmann::ordered_json prompt_set_json(const PromptSet& p) {
  nlohmann::ordered_json j;
  j["organ"] = p.organ;
  j["mode"] = to_string(p.mode);
  if (p.mode == LocalizationMode::Spl) j["n_mm"] = p.n_mm;
  j["margin_px"] = p.margin_px;
  j["grid"] = {p.grid.z, p.grid.y, p.grid.x};
  nlohmann::ordered_json slices = nlohmann::ordered_json::array();
  for (const auto& s : p.slices) {
    nlohmann::ordered_json item;
    item["z"] = s.z;
    item["box"] = {s.box.x0, s.box.x1, s.box.y0, s.box.y1};
    slices.push_back(std::move(item));
  }
  j["slices"] = std::move(slices);
  j["meta"] = p.meta;
  return j;
}

PromptSet prompt_set_from_json(const nlohmann::ordered_json& j) {
  PromptSet p;
  try {
    p.organ = j.at("organ").get<std::string>();
    p.mode = localization_mode_from_string(j.at("mode").get<std::string>());
    if (p.mode == LocalizationMode::Spl) p.n_mm = j.at("n_mm").get<double>();
    p.margin_px = j.at("margin_px").get<int>();
    const auto g = j.at("grid").get<std::array<int, 3>>();
    p.grid = {g[0], g[1], g[2]};
    int last_z = std::numeric_limits<int>::min();
    for (const auto& item : j.at("slices")) {
      SlicePrompt s;
      s.z = item.at("z").get<int>();
      const auto b = item.at("box").get<std::array<int, 4>>();
      s.box = {b[0], b[1], b[2], b[3]};
      if (s.z <= last_z) throw Error(ErrorCode::SchemaMismatch, "prompt slices must have strictly increasing z");
      last_z = s.z;
      p.slices.push_back(s);
    }
    if (j.contains("meta")) p.meta = j.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("prompt set: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidArgument) throw Error(ErrorCode::SchemaMismatch, e.what());
    throw;
  }
  return p;
}

void export_prompts(const PromptSet& prompts, const std::filesystem::path& path) {
  write_text_file(path, prompt_set_json(prompts).dump(2) + "\n");
}

PromptSet import_prompts(const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, path.string() + ": " + e.what());
  }
  return prompt_set_from_json(j);
}

}  // namespace anatomap
