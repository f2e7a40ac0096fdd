#include "anatomap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "anatomap/util.hpp"

namespace anatomap {

std::vector<RolePoint> role_points(const ExtremePoints& points) {
  std::vector<RolePoint> out;
  for (std::size_t i = 0; i < 6; ++i) out.push_back({kExtremeRoles[i], points[i]});
  return out;
}

double ale(const std::vector<RolePoint>& pred, const std::vector<RolePoint>& gt, const Spacing& spacing) {
  if (pred.empty() || gt.empty()) throw Error(ErrorCode::EmptyInput, "ALE needs at least one point");
  if (pred.size() != gt.size()) {
    throw Error(ErrorCode::OrderMismatch, "ALE point counts differ: " + std::to_string(pred.size()) + " vs " +
                                              std::to_string(gt.size()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].role != gt[i].role) {
      throw Error(ErrorCode::OrderMismatch, "point " + std::to_string(i) + " is " + to_string(pred[i].role) +
                                                " in the prediction but " + to_string(gt[i].role) +
                                                " in the ground truth");
    }
    total += (voxel_to_phys(pred[i].point, spacing) - voxel_to_phys(gt[i].point, spacing)).norm();
  }
  return total / double(pred.size());
}

double ale(const ExtremePoints& pred, const ExtremePoints& gt, const Spacing& spacing) {
  return ale(role_points(pred), role_points(gt), spacing);
}

double wall_distance(const BBox3D& pred, const BBox3D& gt) {
  if (!(pred.spacing == gt.spacing)) throw Error(ErrorCode::SpacingMismatch, "boxes carry different spacings");
  const Spacing& e = gt.spacing;
  const double sum = std::abs(pred.z_min - gt.z_min) * e.z() + std::abs(pred.z_max - gt.z_max) * e.z() +
                     std::abs(pred.x_min - gt.x_min) * e.x() + std::abs(pred.x_max - gt.x_max) * e.x() +
                     std::abs(pred.y_min - gt.y_min) * e.y() + std::abs(pred.y_max - gt.y_max) * e.y();
  return sum / 6.0;
}

double iou3d(const BBox3D& pred, const BBox3D& gt) {
  if (!(pred.spacing == gt.spacing)) throw Error(ErrorCode::GridMismatch, "boxes live on different grids");
  auto overlap = [](int a0, int a1, int b0, int b1) { return std::max(0, std::min(a1, b1) - std::max(a0, b0) + 1); };
  const std::size_t inter = std::size_t(overlap(pred.z_min, pred.z_max, gt.z_min, gt.z_max)) *
                            std::size_t(overlap(pred.y_min, pred.y_max, gt.y_min, gt.y_max)) *
                            std::size_t(overlap(pred.x_min, pred.x_max, gt.x_min, gt.x_max));
  const std::size_t uni = pred.voxel_count() + gt.voxel_count() - inter;
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

double dsc(const Mask& pred, const Mask& gt) {
  if (!(pred.shape() == gt.shape())) throw Error(ErrorCode::GridMismatch, "masks live on different grids");
  const std::size_t a = pred.count(), b = gt.count();
  if (a + b == 0) return 1.0;
  return 2.0 * double(pred.overlap(gt)) / double(a + b);
}

double rect_iou(const Rect2D& a, const Rect2D& b) {
  const int ix = std::min(a.x1, b.x1) - std::max(a.x0, b.x0) + 1;
  const int iy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0) + 1;
  const std::size_t inter = (ix > 0 && iy > 0) ? std::size_t(ix) * std::size_t(iy) : 0;
  return double(inter) / double(a.area() + b.area() - inter);
}

double slice_prompt_iou(const PromptSet& prompts, const Mask& gt) {
  if (!(prompts.grid == gt.shape())) throw Error(ErrorCode::GridMismatch, "prompt grid differs from the mask grid");
  const auto truth = mask_slice_boxes(gt);
  std::map<int, Rect2D> pred;
  for (const auto& s : prompts.slices) pred[s.z] = s.box;
  std::set<int> slices;
  for (const auto& [z, _] : truth) slices.insert(z);
  for (const auto& [z, _] : pred) slices.insert(z);
  if (slices.empty()) return 1.0;
  double total = 0.0;
  for (int z : slices) {
    auto t = truth.find(z);
    auto p = pred.find(z);
    if (t != truth.end() && p != pred.end()) total += rect_iou(p->second, t->second);
  }
  return total / double(slices.size());
}

Stat mean_std(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "no values");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / double(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / double(values.size()))};
}

namespace {

OrganReport summarize(const std::string& organ, const std::vector<const CaseMetrics*>& cases) {
  std::vector<double> a, w, i, d;
  for (const auto* c : cases) {
    a.push_back(c->ale);
    w.push_back(c->wd);
    i.push_back(c->iou);
    d.push_back(c->dsc);
  }
  return {organ, cases.size(), mean_std(a), mean_std(w), mean_std(i), mean_std(d)};
}

}  // namespace

EvalReport report(const std::vector<CaseMetrics>& cases) {
  if (cases.empty()) throw Error(ErrorCode::EmptyInput, "report needs at least one case");
  std::map<std::string, std::vector<const CaseMetrics*>> by_organ;
  std::vector<const CaseMetrics*> all;
  for (const auto& c : cases) {
    by_organ[c.organ].push_back(&c);
    all.push_back(&c);
  }
  EvalReport r;
  for (const auto& [organ, list] : by_organ) r.organs.push_back(summarize(organ, list));
  r.cohort = summarize("cohort", all);
  return r;
}

std::string report_csv(const EvalReport& report, const std::string& config_hash) {
  std::ostringstream os;
  os << "# " << kVersion << "; std=population; config=" << config_hash << '\n';
  os << "organ,n_cases,ale_mean,ale_std,wd_mean,wd_std,iou_mean,iou_std,dsc_mean,dsc_std\n";
  auto row = [&os](const OrganReport& o) {
    os << o.organ << ',' << o.n_cases;
    for (const Stat* s : {&o.ale, &o.wd, &o.iou, &o.dsc}) {
      os << ',' << format_double(s->mean) << ',' << format_double(s->std);
    }
    os << '\n';
  };
  for (const auto& o : report.organs) row(o);
  row(report.cohort);
  return os.str();
}

EvalReport parse_report_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  bool header_seen = false;
  EvalReport r;
  bool cohort_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "organ,n_cases,ale_mean,ale_std,wd_mean,wd_std,iou_mean,iou_std,dsc_mean,dsc_std") {
        throw Error(ErrorCode::SchemaMismatch, "unexpected report header: " + line);
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw Error(ErrorCode::SchemaMismatch, "report row needs 10 cells: " + line);
    OrganReport o;
    try {
      o.organ = cells[0];
      o.n_cases = std::stoull(cells[1]);
      Stat* stats[] = {&o.ale, &o.wd, &o.iou, &o.dsc};
      for (std::size_t k = 0; k < 4; ++k) {
        stats[k]->mean = std::stod(cells[2 + 2 * k]);
        stats[k]->std = std::stod(cells[3 + 2 * k]);
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::SchemaMismatch, "report row has a non-numeric cell: " + line);
    }
    if (o.organ == "cohort") {
      r.cohort = o;
      cohort_seen = true;
    } else {
      r.organs.push_back(o);
    }
  }
  if (!header_seen || !cohort_seen) throw Error(ErrorCode::SchemaMismatch, "report lacks a header or cohort row");
  return r;
}

}  // namespace anatomap
