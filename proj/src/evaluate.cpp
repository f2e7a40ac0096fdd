#include "anatomap/evaluate.hpp"

namespace anatomap {

PromptSet organ_prompts(const std::string& organ, const std::vector<Voxel>& points, LocalizationMode mode, int m,
                        double n_mm, int margin_px, Shape3 grid, const Spacing& spacing) {
  std::vector<BBox3D> boxes;
  if (mode == LocalizationMode::Wpl) {
    boxes.push_back(wpl_box(points, spacing).box);
  } else {
    boxes = spl_boxes(points, m, spacing);
  }
  PromptSet p = slice_prompts(boxes, margin_px, grid);
  p.organ = organ;
  p.mode = mode;
  p.n_mm = mode == LocalizationMode::Spl ? n_mm : 0.0;
  return p;
}

OrganEvaluation evaluate_organ(const OrganTruth& truth, const std::vector<Voxel>& points, LocalizationMode mode,
                               int m, double n_mm, int margin_px, const Spacing& spacing) {
  const Shape3& grid = truth.mask.shape();
  std::vector<RolePoint> gt;
  if (mode == LocalizationMode::Wpl) {
    gt = role_points(truth.extremes);
  } else {
    for (const auto& seg : segment_extremes(truth.mask, m)) {
      const auto rp = role_points(seg);
      gt.insert(gt.end(), rp.begin(), rp.end());
    }
  }
  if (points.size() != gt.size()) {
    throw Error(ErrorCode::GroupingError, "organ '" + truth.name + "' expects " + std::to_string(gt.size()) +
                                              " points, got " + std::to_string(points.size()));
  }
  std::vector<RolePoint> pred;
  for (std::size_t i = 0; i < points.size(); ++i) pred.push_back({gt[i].role, points[i]});

  OrganEvaluation out;
  out.box = points_box(points, spacing);
  const BBox3D gt_box = mask_box(truth.mask, spacing);
  out.prompts = organ_prompts(truth.name, points, mode, m, n_mm, margin_px, grid, spacing);
  out.metrics.organ = truth.name;
  out.metrics.ale = ale(pred, gt, spacing);
  out.metrics.wd = wall_distance(out.box, gt_box);
  out.metrics.iou = iou3d(out.box, gt_box);
  out.metrics.dsc = dsc(box_clip_segment(truth.mask, out.prompts), truth.mask);
  out.slice_iou = slice_prompt_iou(out.prompts, truth.mask);
  return out;
}

}  // namespace anatomap
