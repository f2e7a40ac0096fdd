#pragma once

#include <map>
#include <string>
#include <vector>

#include "anatomap/metrics.hpp"

namespace anatomap {

/// Everything derived from one organ's localized landmarks.
struct OrganEvaluation {
  CaseMetrics metrics;
  /// Box spanning all predicted points (the WPL box, or the hull of the SPL
  /// segment boxes); WD and IoU are measured on it.
  BBox3D box;
  PromptSet prompts;
  double slice_iou = 0.0;
};

/// Prompts for an organ from its predicted landmarks, given in segment-major,
/// role-minor order (6 points for WPL, 6m for SPL).
PromptSet organ_prompts(const std::string& organ, const std::vector<Voxel>& points, LocalizationMode mode, int m,
                        double n_mm, int margin_px, Shape3 grid, const Spacing& spacing);

/// Scores predicted landmarks against an organ's ground truth: ALE against
/// the WPL extremes or the m SPL segment extremes, WD and IoU of the spanning
/// box, box-clipped DSC and per-slice prompt IoU.
OrganEvaluation evaluate_organ(const OrganTruth& truth, const std::vector<Voxel>& points, LocalizationMode mode,
                               int m, double n_mm, int margin_px, const Spacing& spacing);

}  // namespace anatomap
