// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: anatomap_acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "anatomap/cli.hpp"
#include "anatomap/evaluate.hpp"
#include "anatomap/kernels.hpp"
#include "anatomap/locate.hpp"
#include "anatomap/metrics.hpp"
#include "anatomap/phantom.hpp"
#include "anatomap/prompt.hpp"
#include "anatomap/train.hpp"
#include "anatomap/util.hpp"
#include "gradcases.hpp"
#include "netcheck.hpp"

using namespace anatomap;
namespace fs = std::filesystem;

namespace {

double cpu_seconds() { return double(std::clock()) / CLOCKS_PER_SEC; }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[fail] " << what << "; ";
    }
  }
  template <class T>
  Verdict& operator<<(const T& v) {
    detail << v;
    return *this;
  }
};

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

std::string fix(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

// ---------------------------------------------------------------- 1

Verdict gradient_correctness() {
  Verdict v;
  const double t0 = cpu_seconds();
  int cases = 0;
  for (const auto& [name, make] : testing::grad_ops()) {
    std::mt19937_64 rng(std::hash<std::string>{}(name) ^ 0x5eedULL);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const auto c = make(rng);
      const auto r = testing::gradcheck(c.f, c.inputs, std::uint64_t(1000 + t), c.h, c.max_elems);
      worst = std::max(worst, r.rel_error);
      ++cases;
    }
    v.check(worst < 1e-3, name + " worst " + sci(worst));
    v << name << " " << sci(worst) << ", ";
  }
  double dir = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) dir = std::max(dir, testing::network_directional_check(16, seed).rel_error);
  v.check(dir < 1e-2, "network directional " + sci(dir));
  const double secs = cpu_seconds() - t0;
  v.check(secs < 120.0, "runtime " + fix(secs, 1) + " s");
  v << cases << " op cases < 1e-3, network directional " << sci(dir) << " < 1e-2, " << fix(secs, 1) << " s CPU";
  return v;
}

// ---------------------------------------------------------------- 2

Verdict equation_fidelity() {
  Verdict v;
  const Spacing e3(3, 3, 3);
  auto near = [](const Vec3& a, const Vec3& b, double tol) {
    for (int k = 0; k < 3; ++k)
      if (std::abs(a[k] - b[k]) > tol) return false;
    return true;
  };

  // offset ground truth
  v.check(near(offset_ground_truth({40, 50, 60}, {50, 60, 70}, e3), {30, 30, 30}, 1e-6), "offset example");
  v.check(near(offset_ground_truth({7, 8, 9}, {7, 8, 9}, e3), {0, 0, 0}, 0.0), "offset zero");
  v.check(near(offset_ground_truth({1, 2, 3}, {9, 4, 0}, e3), offset_ground_truth({9, 4, 0}, {1, 2, 3}, e3) * -1.0, 0.0),
          "offset antisymmetry");

  // bounded offset prediction
  const Vec3 r2{2, 2, 2}, r_big{1500, 600, 600};
  v.check(near(predict_offset({0.3, -0.2, 1.0}, {0.3, -0.2, 1.0}, r2), {0, 0, 0}, 0.0), "predict zero");
  v.check(near(predict_offset({0, 0, 0}, {std::atanh(0.5), 0, 0}, r2), {1, 0, 0}, 1e-6), "predict atanh(0.5)");
  v.check(near(predict_offset({0, 0, 0}, {0.5493, 0, 0}, r2), {1, 0, 0}, 1e-4), "predict 0.5493");
  const Offset sat = predict_offset({0, 0, 0}, {40, 40, 40}, r_big);
  for (int k = 0; k < 3; ++k) v.check(sat[k] < r_big[k] && sat[k] > r_big[k] * (1 - 1e-6), "predict saturation");

  // offset loss
  v.check(loss_uam({1, 2, 3}, {1, 2, 3}) == 0.0, "uam zero");
  v.check(std::abs(loss_uam({3, 4, 0}, {0, 0, 0}) - 25.0) < 1e-6, "uam 25");

  // MSS target
  const Shape3 m16{16, 16, 16};
  v.check(mss_target_voxel({8, 8, 8}, 1, {8, 8, 8}) == Voxel{4, 4, 4}, "target (8,8,8) scale 1");
  v.check(mss_target_voxel({8, 8, 8}, 0, m16) == Voxel{8, 8, 8}, "target (8,8,8) scale 0");
  v.check(mss_target_voxel({7, 7, 7}, 2, {4, 4, 4}) == Voxel{2, 2, 2}, "target (7,7,7) scale 2");

  // metrics
  ExtremePoints gt{}, shifted{};
  const Voxel pts[6] = {{1, 2, 3}, {9, 2, 3}, {5, 2, 0}, {5, 2, 7}, {5, 0, 3}, {5, 6, 3}};
  for (int i = 0; i < 6; ++i) {
    gt[std::size_t(i)] = pts[i];
    shifted[std::size_t(i)] = pts[i] + Voxel{3, 0, 0};
  }
  v.check(ale(gt, gt, e3) == 0.0, "ale zero");
  v.check(std::abs(ale(shifted, gt, e3) - 9.0) < 1e-6, "ale 9");
  const BBox3D a{10, 20, 5, 15, 7, 17, e3}, b{11, 21, 4, 14, 8, 18, e3};
  v.check(wall_distance(a, a) == 0.0, "wd zero");
  v.check(std::abs(wall_distance(a, b) - 3.0) < 1e-6, "wd 3");
  v.check(wall_distance(a, b) == wall_distance(b, a), "wd symmetric");
  const BBox3D u{0, 1, 0, 1, 0, 1, e3}, w{1, 2, 1, 2, 1, 2, e3};
  v.check(iou3d(u, u) == 1.0, "iou identical");
  v.check(std::abs(iou3d(u, w) - 1.0 / 15.0) < 1e-6, "iou 1/15");
  v.check(iou3d(u, BBox3D{5, 6, 5, 6, 5, 6, e3}) == 0.0, "iou disjoint");
  const Shape3 g4{4, 4, 4};
  Mask ma(g4), mb(g4);
  for (int x = 0; x < 4; ++x) ma.set({0, 0, x});
  for (int x = 2; x < 6; ++x) mb.set({0, x / 4, x % 4});
  v.check(dsc(ma, ma) == 1.0, "dsc identical");
  v.check(dsc(ma, mb) == 0.5, "dsc 0.5");
  v.check(dsc(Mask(g4), Mask(g4)) == 1.0, "dsc both empty");

  // tanh bound fuzz
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> up(-60.0, 60.0), ur(1e-3, 2000.0);
  std::exponential_distribution<double> scale(0.2);
  int violations = 0;
  for (int t = 0; t < 100000; ++t) {
    const double s = scale(rng);
    const nn::LatentCoord pq{up(rng) * s, up(rng) * s, up(rng) * s}, ps{up(rng) * s, up(rng) * s, up(rng) * s};
    const Vec3 r{ur(rng), ur(rng), ur(rng)};
    const Offset d = predict_offset(pq, ps, r);
    for (int k = 0; k < 3; ++k) violations += !(std::abs(d[k]) < r[k]);
  }
  v.check(violations == 0, std::to_string(violations) + " fuzz violations");
  v << "offset, bounded prediction, offset loss, MSS target, ALE, WD, IoU, DSC examples; |d| < r on 1e5 fuzzed inputs ("
    << violations << " violations)";
  return v;
}

// ---------------------------------------------------------------- 3

Verdict metric_oracles() {
  Verdict v;
  std::mt19937_64 rng(31);
  const Spacing e3(3, 3, 3);
  const Shape3 g{14, 14, 14};
  auto span = [&](int& lo, int& hi) {
    lo = int(rng() % 14);
    hi = int(rng() % 14);
    if (lo > hi) std::swap(lo, hi);
  };
  int iou_bad = 0;
  for (int t = 0; t < 1000; ++t) {
    BBox3D a, b;
    a.spacing = b.spacing = e3;
    span(a.z_min, a.z_max);
    span(a.y_min, a.y_max);
    span(a.x_min, a.x_max);
    span(b.z_min, b.z_max);
    span(b.y_min, b.y_max);
    span(b.x_min, b.x_max);
    std::size_t na = 0, nb = 0, both = 0;
    for (int z = 0; z < g.z; ++z)
      for (int y = 0; y < g.y; ++y)
        for (int x = 0; x < g.x; ++x) {
          const bool ia = z >= a.z_min && z <= a.z_max && y >= a.y_min && y <= a.y_max && x >= a.x_min && x <= a.x_max;
          const bool ib = z >= b.z_min && z <= b.z_max && y >= b.y_min && y <= b.y_max && x >= b.x_min && x <= b.x_max;
          na += ia;
          nb += ib;
          both += ia && ib;
        }
    iou_bad += iou3d(a, b) != double(both) / double(na + nb - both);
  }
  int dsc_bad = 0;
  const Shape3 h{9, 11, 13};
  for (int t = 0; t < 100; ++t) {
    Mask p(h), q(h);
    std::size_t np = 0, nq = 0, both = 0;
    const unsigned dp = 1 + unsigned(rng() % 7), dq = 1 + unsigned(rng() % 7);
    for (int i = 0; i < int(h.count()); ++i) {
      const Voxel at{i / (h.y * h.x), i / h.x % h.y, i % h.x};
      const bool ip = rng() % dp == 0, iq = rng() % dq == 0;
      if (ip) p.set(at);
      if (iq) q.set(at);
      np += ip;
      nq += iq;
      both += ip && iq;
    }
    dsc_bad += dsc(p, q) != (np + nq == 0 ? 1.0 : 2.0 * double(both) / double(np + nq));
  }
  v.check(iou_bad == 0, std::to_string(iou_bad) + " IoU mismatches");
  v.check(dsc_bad == 0, std::to_string(dsc_bad) + " DSC mismatches");
  v << "iou3d == voxel count on 1000 box pairs (" << iou_bad << " mismatches), dsc == hand count on 100 mask pairs ("
    << dsc_bad << " mismatches)";
  return v;
}

// ---------------------------------------------------------------- 4

constexpr int kTrainCount = 40;
constexpr int kTrainEpochs = 20;
constexpr std::uint64_t kCohortSeed = 7;
constexpr std::uint64_t kEvalSeed = 999;
constexpr int kSupports = 5;
constexpr int kQueries = 10;
constexpr double kSplN = 6.0;
constexpr int kMargin = 10;
// The offset loss is in mm^2 and swamps the similarity loss at weight 1.
constexpr double kMseWeight = 1e-4;

struct TrendSums {
  double err_coarse = 0, err_refined = 0;
  double iou_coarse = 0, iou_refined = 0, iou_k1 = 0;
  double slice_wpl = 0, slice_spl = 0, dsc_wpl = 0, dsc_spl = 0;
  double ale = 0, ale_random = 0;
  int points = 0, organs = 0;
};

Verdict phantom_trends() {
  Verdict v;
  const double t0 = cpu_seconds();
  const PhantomSpec spec = PhantomSpec::default_spec();
  const Spacing e = spec.spacing;
  const std::vector<std::string> organs{"liver", "spleen", "kidney_l", "kidney_r"};

  std::vector<Volume> train_set;
  for (auto& p : generate_cohort(spec, kTrainCount, kCohortSeed)) train_set.push_back(std::move(p.volume));
  TrainConfig config;
  config.epochs = kTrainEpochs;
  config.mse_weight = kMseWeight;
  const TrainResult trained = train(train_set, config);
  train_set.clear();
  const nn::NetworkWeights& weights = trained.checkpoint.weights;
  const Vec3 r = trained.checkpoint.r;
  const double t_train = cpu_seconds() - t0;

  const auto cohort = generate_cohort(spec, kSupports + kQueries, kEvalSeed);
  std::map<std::string, int> segments;
  for (const auto& o : organs) {
    std::vector<const Mask*> masks;
    for (int s = 0; s < kSupports; ++s) masks.push_back(&cohort[std::size_t(s)].truth.organ(o).mask);
    segments[o] = cohort_segment_count(masks, e, kSplN);
  }
  std::vector<SupportCase> k5, k1;
  for (int s = 0; s < kSupports; ++s) {
    const Phantom& p = cohort[std::size_t(s)];
    SupportCase c{&p.volume, {}};
    for (const auto& o : organs) {
      for (const auto& [name, at] : organ_landmarks(p.truth.organ(o), LocalizationMode::Wpl, 1)) c.landmarks[name] = at;
      for (const auto& [name, at] : organ_landmarks(p.truth.organ(o), LocalizationMode::Spl, segments[o]))
        c.landmarks[name] = at;
    }
    if (s == 0) {
      SupportCase one{c.volume, {}};
      for (const auto& [name, at] : c.landmarks)
        if (name.find("/seg") == std::string::npos) one.landmarks[name] = at;
      k1.push_back(one);
    }
    k5.push_back(std::move(c));
  }
  const SupportModel model5 = build_support_model(k5, weights);
  const SupportModel model1 = build_support_model(k1, weights);

  TrendSums sum;
  for (int q = kSupports; q < kSupports + kQueries; ++q) {
    const Phantom& query = cohort[std::size_t(q)];
    std::map<std::string, LandmarkEstimate> est5, est1, rand;
    for (auto& x : localize_all(query.volume, model5, weights, r)) est5[x.name] = x;
    for (auto& x : localize_all(query.volume, model1, weights, r)) est1[x.name] = x;
    LocateOptions random_opt;
    random_opt.random_start = true;
    random_opt.refine = false;
    random_opt.max_steps = 0;
    random_opt.seed = std::uint64_t(q);
    for (auto& x : localize_all(query.volume, model1, weights, r, random_opt)) rand[x.name] = x;

    for (const auto& o : organs) {
      const OrganTruth& truth = query.truth.organ(o);
      std::vector<Voxel> coarse, refined, one, random_pts, spl;
      for (std::size_t i = 0; i < kExtremeRoles.size(); ++i) {
        const std::string name = wpl_landmark_name(o, kExtremeRoles[i]);
        coarse.push_back(est5.at(name).coarse);
        refined.push_back(est5.at(name).point);
        one.push_back(est1.at(name).point);
        random_pts.push_back(rand.at(name).point);
        const Vec3 t = voxel_to_phys(truth.extremes[i], e);
        sum.err_coarse += (voxel_to_phys(coarse.back(), e) - t).norm();
        sum.err_refined += (voxel_to_phys(refined.back(), e) - t).norm();
        ++sum.points;
      }
      for (int s = 0; s < segments[o]; ++s)
        for (auto role : kExtremeRoles) spl.push_back(est5.at(spl_landmark_name(o, s, role)).point);

      const int m = segments[o];
      sum.iou_coarse += evaluate_organ(truth, coarse, LocalizationMode::Wpl, 1, kSplN, kMargin, e).metrics.iou;
      const OrganEvaluation w10 = evaluate_organ(truth, refined, LocalizationMode::Wpl, 1, kSplN, kMargin, e);
      sum.iou_refined += w10.metrics.iou;
      sum.ale += w10.metrics.ale;
      sum.dsc_wpl += w10.metrics.dsc;
      sum.iou_k1 += evaluate_organ(truth, one, LocalizationMode::Wpl, 1, kSplN, kMargin, e).metrics.iou;
      sum.ale_random += evaluate_organ(truth, random_pts, LocalizationMode::Wpl, 1, kSplN, kMargin, e).metrics.ale;
      sum.dsc_spl += evaluate_organ(truth, spl, LocalizationMode::Spl, m, kSplN, kMargin, e).metrics.dsc;
      sum.slice_wpl += evaluate_organ(truth, refined, LocalizationMode::Wpl, 1, kSplN, 0, e).slice_iou;
      sum.slice_spl += evaluate_organ(truth, spl, LocalizationMode::Spl, m, kSplN, 0, e).slice_iou;
      ++sum.organs;
    }
  }
  const double no = sum.organs, np = sum.points;
  const double ec = sum.err_coarse / np, er = sum.err_refined / np;
  const double ic = sum.iou_coarse / no, ir = sum.iou_refined / no, i1 = sum.iou_k1 / no;
  const double sw = sum.slice_wpl / no, ss = sum.slice_spl / no, dw = sum.dsc_wpl / no, ds = sum.dsc_spl / no;
  const double al = sum.ale / no, ar = sum.ale_random / no;
  const double secs = cpu_seconds() - t0;

  v.check(er <= ec, "(a) refined error " + fix(er) + " > coarse " + fix(ec));
  v.check(ir > ic, "(a) IoU refined " + fix(ir) + " <= coarse " + fix(ic));
  v.check(ir >= i1, "(b) IoU k=5 " + fix(ir) + " < k=1 " + fix(i1));
  v.check(ss >= sw, "(c) slice IoU SPL " + fix(ss) + " < WPL " + fix(sw));
  v.check(ds >= dw, "(c) DSC SPL " + fix(ds) + " < WPL " + fix(dw));
  v.check(al < 0.25 * ar, "(d) ALE " + fix(al) + " >= 25% of random " + fix(ar));
  v.check(secs < 900.0, "runtime " + fix(secs, 0) + " s");
  v << "(a) error refined " << fix(er, 2) << " vs coarse " << fix(ec, 2) << " mm, IoU " << fix(ir) << " vs " << fix(ic)
    << "; (b) IoU k=5 " << fix(ir) << " vs k=1 " << fix(i1) << "; (c) slice IoU SPL " << fix(ss) << " vs WPL " << fix(sw)
    << ", DSC " << fix(ds) << " vs " << fix(dw) << "; (d) ALE " << fix(al, 2) << " vs random " << fix(ar, 2)
    << " mm; train " << fix(t_train, 0) << " s, total " << fix(secs, 0) << " s CPU";
  return v;
}

// ---------------------------------------------------------------- 5

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& f : fs::recursive_directory_iterator(dir))
    if (f.is_regular_file()) files[fs::relative(f.path(), dir).generic_string()] = read_text_file(f.path());
  return files;
}

Verdict determinism() {
  Verdict v;
  const fs::path dir = fs::temp_directory_path() / "anatomap_acceptance_det";
  auto pipeline = [&]() -> std::string {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string d = dir.string();
    const std::vector<std::vector<std::string>> steps{
        {"phantom-gen", "--count", "3", "--out", d + "/cohort", "--seed", "11", "--strict"},
        {"train", "--cohort", d + "/cohort", "--out", d + "/train", "--epochs", "2", "--subjects", "2", "--seed", "5",
         "--strict"},
        {"make-support", "--cohort", d + "/cohort", "--k", "2", "--mode", "spl", "--organ", "ball", "kidney_l", "--out",
         d + "/support.json"},
        {"localize", "--checkpoint", d + "/train/checkpoint.json", "--support", d + "/support.json", "--query", "",
         "--k", "2", "--out", d + "/landmarks.json", "--seed", "5", "--strict"},
        {"prompt", "--landmarks", d + "/landmarks.json", "--out", d + "/prompts", "--mode", "spl", "--n", "6"},
        {"eval", "--landmarks", d + "/landmarks.json", "--truth", "", "--out", d + "/metrics.csv"},
    };
    for (auto args : steps) {
      if (args[0] == "localize") args[6] = cli::read_cohort(dir / "cohort")[2].volume.string();
      if (args[0] == "eval") args[4] = cli::read_cohort(dir / "cohort")[2].ground_truth.string();
      std::ostringstream out, err;
      const int code = cli::run(args, out, err);
      if (code != 0) return args[0] + " exit " + std::to_string(code) + ": " + err.str();
    }
    return {};
  };
  const std::string e1 = pipeline();
  const auto first = snapshot(dir);
  const std::string e2 = pipeline();
  const auto second = snapshot(dir);
  fs::remove_all(dir);
  v.check(e1.empty() && e2.empty(), "pipeline error " + e1 + e2);
  std::vector<std::string> differing;
  for (const auto& [name, bytes] : first) {
    auto it = second.find(name);
    if (it == second.end() || it->second != bytes) differing.push_back(name);
  }
  v.check(first.size() == second.size(), "file sets differ");
  v.check(differing.empty(), std::to_string(differing.size()) + " files differ" +
                                 (differing.empty() ? std::string() : " (first " + differing[0] + ")"));
  v << first.size() << " output files of phantom-gen, train (2 epochs), make-support, localize, prompt, eval byte-identical across "
                       "two strict runs";
  return v;
}

// ---------------------------------------------------------------- 6

Verdict invariants() {
  Verdict v;
  const PhantomSpec spec = PhantomSpec::default_spec();
  const Spacing e = spec.spacing;
  const auto cohort = generate_cohort(spec, 2, 41);

  // unit-norm features
  const auto weights = nn::NetworkWeights::initialize(nn::NetworkConfig{}, 3);
  std::size_t unit = 0, zero = 0, bad = 0;
  const Volume vol = normalize_hu(cohort[0].volume);
  for (const Voxel at : {Voxel{32, 32, 32}, Voxel{20, 40, 30}}) {
    const auto out = embed_at(vol, at, weights);
    for (const auto& f : out.features) {
      const std::size_t n = std::size_t(f.dim(1)) * f.dim(2) * f.dim(3);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int c = 0; c < f.dim(0); ++c) s += double(f[std::size_t(c) * n + i]) * f[std::size_t(c) * n + i];
        const double norm = std::sqrt(s);
        if (norm == 0.0)
          ++zero;
        else if (std::abs(norm - 1.0) <= 1e-5)
          ++unit;
        else
          ++bad;
      }
    }
  }
  v.check(bad == 0, std::to_string(bad) + " feature vectors off unit norm");

  // spatial softmax sums
  std::mt19937_64 rng(17);
  double worst_sum = 0.0;
  for (int t = 0; t < 50; ++t) {
    const int s = 2 + int(rng() % 15);
    const auto x = testing::random_tensor({s, s, s}, rng, -20.0f, 20.0f);
    const nn::Tensor y = nn::kernels::softmax_spatial_forward(x);
    double sum = 0.0;
    for (float p : y.values()) sum += p;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  v.check(worst_sum <= 1e-6, "softmax sum off by " + sci(worst_sum));

  // one-hot MSS targets
  int not_one_hot = 0;
  std::uniform_real_distribution<double> u(0.0, 31.0);
  for (int t = 0; t < 1000; ++t) {
    const int scale = int(rng() % 3);
    const Shape3 m{32 >> scale, 32 >> scale, 32 >> scale};
    const nn::Tensor y = mss_target({u(rng), u(rng), u(rng)}, scale, m);
    std::size_t ones = 0, zeros = 0;
    for (float x : y.values()) {
      ones += x == 1.0f;
      zeros += x == 0.0f;
    }
    not_one_hot += !(ones == 1 && zeros + 1 == y.numel());
  }
  v.check(not_one_hot == 0, std::to_string(not_one_hot) + " targets not one-hot");

  // slice counts and SPL inside WPL
  int count_bad = 0, nest_bad = 0, organs_seen = 0;
  for (const auto& p : cohort)
    for (const auto& o : p.truth.organs) {
      ++organs_seen;
      const Shape3 g = o.mask.shape();
      const BBox3D wb = wpl_box(std::vector<Voxel>(o.extremes.begin(), o.extremes.end()), e).box;
      const int m = segment_count(z_span_mm(o.mask, e), 6.0);
      std::vector<Voxel> pts;
      for (const auto& s : segment_extremes(o.mask, m)) pts.insert(pts.end(), s.begin(), s.end());
      const auto sb = spl_boxes(pts, m, e);
      for (int margin : {0, 10}) {
        const PromptSet wpl = slice_prompts({wb}, margin, g);
        const PromptSet spl = slice_prompts(sb, margin, g);
        std::set<int> zs;
        for (const auto& b : sb)
          for (int z = b.z_min; z <= b.z_max; ++z) zs.insert(z);
        count_bad += int(wpl.slices.size()) != wb.z_max - wb.z_min + 1;
        count_bad += spl.slices.size() != zs.size();
        std::map<int, Rect2D> wr;
        for (const auto& s : wpl.slices) wr[s.z] = s.box;
        for (const auto& s : spl.slices) {
          auto it = wr.find(s.z);
          nest_bad += it == wr.end() || s.box.x0 < it->second.x0 || s.box.x1 > it->second.x1 ||
                      s.box.y0 < it->second.y0 || s.box.y1 > it->second.y1;
        }
      }
    }
  v.check(count_bad == 0, std::to_string(count_bad) + " slice count mismatches");
  v.check(nest_bad == 0, std::to_string(nest_bad) + " SPL rectangles outside WPL");
  v << "feature norms " << unit << " unit / " << zero << " zero / " << bad << " off; softmax |sum-1| max "
    << sci(worst_sum) << "; " << not_one_hot << " non-one-hot targets of 1000; " << organs_seen
    << " organs: slice counts and SPL within WPL at margins 0 and 10";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradient_correctness}, {"equation fidelity", equation_fidelity},
      {"metric oracle equivalence", metric_oracles},  {"phantom trend suite", phantom_trends},
      {"determinism", determinism},                   {"invariant suite", invariants},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!wanted.empty() && !wanted.contains(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    all = all && v.pass;
    std::cout << "criterion " << id << " " << criteria[i].first << ": " << (v.pass ? "PASS" : "FAIL") << " - "
              << v.detail.str() << std::endl;
  }
  return all ? 0 : 1;
}
