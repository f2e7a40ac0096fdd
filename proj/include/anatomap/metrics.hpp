#pragma once

#include <string>
#include <vector>

#include "anatomap/prompt.hpp"

namespace anatomap {

struct RolePoint {
  ExtremeRole role = ExtremeRole::ZMin;
  Voxel point;
};

std::vector<RolePoint> role_points(const ExtremePoints& points);

/// Mean physical distance between matched points, mm. Throws OrderMismatch
/// when the role sequences differ and EmptyInput for no points.
double ale(const std::vector<RolePoint>& pred, const std::vector<RolePoint>& gt, const Spacing& spacing);
double ale(const ExtremePoints& pred, const ExtremePoints& gt, const Spacing& spacing);

/// Mean over the six faces of |pred face - gt face|, mm.
/// Throws SpacingMismatch when the boxes carry different spacings.
double wall_distance(const BBox3D& pred, const BBox3D& gt);

/// Voxel-count IoU of inclusive boxes. Throws GridMismatch when the boxes
/// carry different spacings.
double iou3d(const BBox3D& pred, const BBox3D& gt);

/// 2|A and B| / (|A| + |B|); 1 when both are empty. Throws GridMismatch.
double dsc(const Mask& pred, const Mask& gt);

double rect_iou(const Rect2D& a, const Rect2D& b);

/// Mean IoU between prompt rectangles and the ground-truth slice boxes over
/// every slice either side covers (a slice covered by one side only scores 0).
double slice_prompt_iou(const PromptSet& prompts, const Mask& gt);

struct CaseMetrics {
  std::string organ;
  double ale = 0.0;
  double wd = 0.0;
  double iou = 0.0;
  double dsc = 0.0;
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct OrganReport {
  std::string organ;
  std::size_t n_cases = 0;
  Stat ale, wd, iou, dsc;
};

struct EvalReport {
  std::vector<OrganReport> organs;  // sorted by name
  OrganReport cohort;               // every case pooled; organ name "cohort"
};

Stat mean_std(const std::vector<double>& values);

/// Throws EmptyInput for no cases.
EvalReport report(const std::vector<CaseMetrics>& cases);

/// Comment line with version, std convention and config hash, then the
/// header organ,n_cases,ale_mean,...,dsc_std and one row per organ plus the
/// cohort row.
std::string report_csv(const EvalReport& report, const std::string& config_hash);
EvalReport parse_report_csv(const std::string& text);

}  // namespace anatomap
