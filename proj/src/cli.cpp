#include "anatomap/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "anatomap/evaluate.hpp"
#include "anatomap/phantom.hpp"
#include "anatomap/train.hpp"
#include "anatomap/util.hpp"

namespace anatomap::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::NanLoss:
      return kExitNumeric;
    case ErrorCode::IoError:
    case ErrorCode::CorruptCheckpoint:
      return kExitIo;
    default:
      return kExitValidation;
  }
}

std::string config_hash(const ordered_json& config) { return sha256_hex(config.dump()).substr(0, 16); }

std::uint64_t resolve_seed(const std::string& flag_value) {
  std::string text = flag_value;
  if (text.empty()) {
    const char* env = std::getenv("ANATOMAP_SEED");
    if (env == nullptr || *env == '\0') return 0;
    text = env;
  }
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used, 0);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::InvalidArgument, "seed must be an unsigned integer, got '" + text + "'");
  }
}

namespace {

ordered_json voxel_json(Voxel v) { return {v.z, v.y, v.x}; }

Voxel voxel_from(const nlohmann::json& j) {
  const auto a = j.get<std::array<int, 3>>();
  return {a[0], a[1], a[2]};
}

nlohmann::json parse_json_file(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, path.string() + ": " + e.what());
  }
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::IoError, what + " not found: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

ordered_json meta_json(const std::string& hash) {
  ordered_json m;
  m["version"] = kVersion;
  m["config_hash"] = hash;
  return m;
}

Vec3 vec3_from(const std::vector<double>& v, const std::string& flag) {
  if (v.size() != 3) throw Error(ErrorCode::InvalidArgument, flag + " takes three values (z y x)");
  return {v[0], v[1], v[2]};
}

int effective_jobs(int jobs, bool strict) {
  if (jobs < 1) throw Error(ErrorCode::InvalidArgument, "--jobs must be >= 1");
  return strict ? 1 : jobs;
}

}  // namespace

// ---------------------------------------------------------------------------
// cohort manifest

std::vector<CohortSubject> read_cohort(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  require_file(manifest, "cohort manifest");
  const auto j = parse_json_file(manifest);
  std::vector<CohortSubject> out;
  try {
    for (const auto& s : j.at("subjects")) {
      CohortSubject c;
      c.id = s.at("id").get<std::string>();
      c.volume = fs::absolute(dir / s.at("volume").get<std::string>());
      c.ground_truth = fs::absolute(dir / s.at("ground_truth").get<std::string>());
      out.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, manifest.string() + ": " + e.what());
  }
  if (out.empty()) throw Error(ErrorCode::EmptyInput, manifest.string() + " lists no subjects");
  return out;
}

// ---------------------------------------------------------------------------
// landmark files

ordered_json landmark_file_json(const LandmarkFile& f) {
  ordered_json j;
  j["format"] = "anatomap-landmarks";
  j["query"] = f.query;
  j["grid"] = {f.grid.z, f.grid.y, f.grid.x};
  j["spacing"] = {f.spacing.z(), f.spacing.y(), f.spacing.x()};
  j["mode"] = to_string(f.mode);
  if (f.mode == LocalizationMode::Spl) j["n_mm"] = f.n_mm;
  j["k"] = f.k;
  auto arr = ordered_json::array();
  for (const auto& l : f.landmarks) {
    ordered_json e;
    e["name"] = l.name;
    e["point"] = voxel_json(l.point);
    e["coarse"] = voxel_json(l.coarse);
    e["steps"] = l.steps;
    arr.push_back(std::move(e));
  }
  j["landmarks"] = std::move(arr);
  j["meta"] = f.meta;
  return j;
}

LandmarkFile parse_landmark_file(const nlohmann::json& j) {
  LandmarkFile f;
  try {
    if (j.at("format").get<std::string>() != "anatomap-landmarks") {
      throw Error(ErrorCode::SchemaMismatch, "not a landmark file");
    }
    f.query = j.at("query").get<std::string>();
    const auto g = j.at("grid").get<std::array<int, 3>>();
    f.grid = {g[0], g[1], g[2]};
    const auto s = j.at("spacing").get<std::array<double, 3>>();
    f.spacing = Spacing(s[0], s[1], s[2]);
    f.mode = localization_mode_from_string(j.at("mode").get<std::string>());
    if (f.mode == LocalizationMode::Spl) f.n_mm = j.at("n_mm").get<double>();
    f.k = j.at("k").get<int>();
    for (const auto& e : j.at("landmarks")) {
      LandmarkEstimate l;
      l.name = e.at("name").get<std::string>();
      l.point = voxel_from(e.at("point"));
      l.coarse = e.contains("coarse") ? voxel_from(e.at("coarse")) : l.point;
      l.steps = e.value("steps", 0);
      f.landmarks.push_back(std::move(l));
    }
    if (j.contains("meta")) f.meta = j.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("landmark file: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidArgument) throw Error(ErrorCode::SchemaMismatch, e.what());
    throw;
  }
  return f;
}

std::vector<std::string> landmark_organs(const LandmarkFile& f) {
  std::set<std::string> organs;
  for (const auto& l : f.landmarks) organs.insert(l.name.substr(0, l.name.find('/')));
  return {organs.begin(), organs.end()};
}

std::pair<std::vector<Voxel>, int> organ_points(const LandmarkFile& f, const std::string& organ) {
  std::map<std::string, Voxel> by_name;
  for (const auto& l : f.landmarks) by_name[l.name] = l.point;
  int m = 1;
  if (f.mode == LocalizationMode::Spl) {
    m = 0;
    const std::string prefix = organ + "/seg";
    for (const auto& [name, _] : by_name) {
      if (name.rfind(prefix, 0) != 0) continue;
      const auto slash = name.find('/', prefix.size());
      m = std::max(m, std::stoi(name.substr(prefix.size(), slash - prefix.size())) + 1);
    }
  }
  std::vector<Voxel> points;
  for (int s = 0; s < m; ++s)
    for (auto role : kExtremeRoles) {
      const std::string name =
          f.mode == LocalizationMode::Wpl ? wpl_landmark_name(organ, role) : spl_landmark_name(organ, s, role);
      auto it = by_name.find(name);
      if (it == by_name.end()) throw Error(ErrorCode::GroupingError, "missing landmark " + name);
      points.push_back(it->second);
    }
  if (points.empty()) throw Error(ErrorCode::GroupingError, "no landmarks for organ '" + organ + "'");
  return {points, m};
}

// ---------------------------------------------------------------------------
// subcommands

namespace {

struct Common {
  std::string seed;
  int jobs = 1;
  bool strict = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "RNG seed (falls back to ANATOMAP_SEED, then 0)");
  cmd->add_option("--jobs", c.jobs, "Worker thread cap")->default_val(1);
  cmd->add_flag("--strict", c.strict, "Single-threaded, byte-reproducible run");
}

struct PhantomGenArgs {
  std::string spec, out;
  int count = 0;
  Common common;
};

int cmd_phantom_gen(const PhantomGenArgs& a, std::ostream& out) {
  PhantomSpec spec = PhantomSpec::default_spec();
  if (!a.spec.empty()) {
    require_file(a.spec, "phantom spec");
    spec = PhantomSpec::from_json(parse_json_file(a.spec));
  }
  spec.validate();
  if (a.count < 1) throw Error(ErrorCode::InvalidArgument, "--count must be >= 1");
  const std::uint64_t seed = resolve_seed(a.common.seed);
  const int jobs = effective_jobs(a.common.jobs, a.common.strict);
  const fs::path dir = fs::absolute(a.out);
  ensure_dir(dir);

  ordered_json cfg;
  cfg["command"] = "phantom-gen";
  cfg["spec"] = spec.to_json();
  cfg["count"] = a.count;
  cfg["seed"] = seed;
  const std::string hash = config_hash(cfg);

  const auto cohort = generate_cohort(spec, std::size_t(a.count), seed, jobs);
  ordered_json subjects = ordered_json::array();
  ordered_json files = ordered_json::array();
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "subject_%03zu", i);
    const std::string vol = std::string(stem) + ".json";
    write_vol1(cohort[i].volume, dir / vol);
    write_ground_truth(cohort[i].truth, cohort[i].volume.spacing(), dir, stem);
    subjects.push_back({{"id", stem}, {"seed", subject_seed(seed, i)}, {"volume", vol},
                        {"ground_truth", std::string(stem) + "_gt.json"}});
    std::vector<std::string> names{vol, vol1_raw_path(vol).string(), std::string(stem) + "_gt.json"};
    for (const auto& o : cohort[i].truth.organs) {
      const std::string mask = std::string(stem) + "_mask_" + o.name;
      names.push_back(mask + ".json");
      names.push_back(mask + ".bits");
    }
    for (const auto& n : names) files.push_back({{"path", n}, {"sha256", sha256_file(dir / n)}});
  }
  ordered_json manifest;
  manifest["format"] = "anatomap-cohort";
  manifest["version"] = kVersion;
  manifest["config_hash"] = hash;
  manifest["seed"] = seed;
  manifest["count"] = a.count;
  manifest["spec"] = spec.to_json();
  manifest["subjects"] = std::move(subjects);
  manifest["files"] = std::move(files);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << a.count << " phantoms to " << dir.string() << " (config " << hash << ")\n";
  return kExitOk;
}

struct TrainArgs {
  std::string cohort, config, out, resume;
  int epochs = -1;
  int subjects = 0;
  std::vector<double> r;
  Common common;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const fs::path dir = fs::absolute(a.out);
  std::optional<nn::Checkpoint> resume;
  if (!a.resume.empty()) {
    require_file(a.resume, "checkpoint");
    resume = nn::load_checkpoint(a.resume);
  }
  TrainConfig config;
  if (!a.config.empty()) {
    require_file(a.config, "train config");
    config = TrainConfig::from_json(parse_json_file(a.config));
  } else if (resume) {
    config = TrainConfig::from_json(resume->train_config);
  }
  if (a.epochs >= 0) config.epochs = a.epochs;
  if (!a.r.empty()) config.r = vec3_from(a.r, "--r");
  if (!a.common.seed.empty() || std::getenv("ANATOMAP_SEED") != nullptr) config.seed = resolve_seed(a.common.seed);
  config.validate();
  const int jobs = effective_jobs(a.common.jobs, a.common.strict);

  auto subjects = read_cohort(a.cohort);
  if (a.subjects < 0) throw Error(ErrorCode::InvalidArgument, "--subjects must be >= 0");
  if (a.subjects > 0) {
    if (std::size_t(a.subjects) > subjects.size()) {
      throw Error(ErrorCode::InvalidArgument, "--subjects exceeds the cohort size " + std::to_string(subjects.size()));
    }
    subjects.resize(std::size_t(a.subjects));
  }
  std::vector<Volume> volumes;
  ordered_json inputs = ordered_json::array();
  for (const auto& s : subjects) {
    volumes.push_back(read_vol1(s.volume));
    inputs.push_back(sha256_file(vol1_raw_path(s.volume)));
  }

  ordered_json cfg;
  cfg["command"] = "train";
  cfg["config"] = config.to_json();
  cfg["volumes"] = inputs;
  cfg["resume"] = resume ? sha256_file(nn::checkpoint_blob_path(a.resume)) : "";
  const std::string hash = config_hash(cfg);

  ensure_dir(dir);
  const fs::path ckpt_path = dir / "checkpoint.json";
  const fs::path csv_path = dir / "loss.csv";
  std::vector<EpochLoss> history;
  TrainOptions opts;
  opts.jobs = jobs;
  opts.resume = resume;
  opts.on_epoch = [&](const EpochLoss& e, const nn::Checkpoint& ck) {
    history.push_back(e);
    nn::save_checkpoint(ck, ckpt_path);
    write_text_file(csv_path, loss_history_csv(history));
    out << "epoch " << e.epoch << " l_mse " << format_double(e.l_mse) << " l_ce " << format_double(e.l_ce)
        << " l_total " << format_double(e.l_total) << '\n';
  };
  const TrainResult result = train(volumes, config, opts);
  nn::save_checkpoint(result.checkpoint, ckpt_path);
  write_text_file(csv_path, loss_history_csv(result.history));

  ordered_json run;
  run["version"] = kVersion;
  run["config_hash"] = hash;
  run["config"] = config.to_json();
  run["subjects"] = subjects.size();
  run["first_epoch"] = result.history.empty() ? result.checkpoint.epoch : result.history.front().epoch;
  run["last_epoch"] = result.checkpoint.epoch;
  write_text_file(dir / "train_run.json", run.dump(2) + "\n");
  out << "checkpoint " << ckpt_path.string() << " at epoch " << result.checkpoint.epoch << " (config " << hash
      << ")\n";
  return kExitOk;
}

struct SupportArgs {
  std::string cohort, out, mode = "wpl";
  std::vector<std::string> subjects, organs;
  int k = 5;
  double n_mm = 6.0;
};

int cmd_make_support(const SupportArgs& a, std::ostream& out) {
  const auto mode = localization_mode_from_string(a.mode);
  if (a.n_mm <= 0.0) throw Error(ErrorCode::InvalidArgument, "--n must be > 0");
  const auto all = read_cohort(a.cohort);
  std::vector<CohortSubject> chosen;
  if (!a.subjects.empty()) {
    for (const auto& id : a.subjects) {
      auto it = std::find_if(all.begin(), all.end(), [&](const CohortSubject& s) { return s.id == id; });
      if (it == all.end()) throw Error(ErrorCode::InvalidArgument, "unknown subject '" + id + "'");
      chosen.push_back(*it);
    }
  } else {
    if (a.k < 1 || std::size_t(a.k) > all.size()) {
      throw Error(ErrorCode::InvalidArgument, "--k must be in [1, " + std::to_string(all.size()) + "]");
    }
    chosen.assign(all.begin(), all.begin() + a.k);
  }
  std::vector<GroundTruth> truths;
  for (const auto& s : chosen) truths.push_back(read_ground_truth(s.ground_truth));
  std::vector<std::string> organs = a.organs;
  if (organs.empty()) {
    for (const auto& o : truths.front().organs) organs.push_back(o.name);
  }
  std::sort(organs.begin(), organs.end());
  const Spacing spacing = read_vol1(chosen.front().volume).spacing();

  ordered_json segments = ordered_json::object();
  std::map<std::string, int> m_of;
  for (const auto& organ : organs) {
    int m = 1;
    if (mode == LocalizationMode::Spl) {
      std::vector<const Mask*> masks;
      for (const auto& t : truths) masks.push_back(&t.organ(organ).mask);
      m = cohort_segment_count(masks, spacing, a.n_mm);
    } else {
      for (const auto& t : truths) t.organ(organ);
    }
    m_of[organ] = m;
    segments[organ] = m;
  }

  const fs::path out_path = fs::absolute(a.out);
  std::vector<SupportEntry> entries;
  ordered_json ids = ordered_json::array();
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    SupportEntry e;
    e.volume = fs::relative(chosen[i].volume, out_path.parent_path()).generic_string();
    for (const auto& organ : organs) {
      for (auto& [name, v] : organ_landmarks(truths[i].organ(organ), mode, m_of[organ])) e.landmarks[name] = v;
    }
    entries.push_back(std::move(e));
    ids.push_back(chosen[i].id);
  }

  ordered_json cfg;
  cfg["command"] = "make-support";
  cfg["subjects"] = ids;
  cfg["organs"] = organs;
  cfg["mode"] = to_string(mode);
  cfg["n_mm"] = a.n_mm;
  const std::string hash = config_hash(cfg);

  ordered_json j;
  j["format"] = "anatomap-support";
  j["mode"] = to_string(mode);
  if (mode == LocalizationMode::Spl) j["n_mm"] = a.n_mm;
  j["segments"] = segments;
  j["subjects"] = ids;
  j["supports"] = support_descriptor_json(entries);
  j["meta"] = meta_json(hash);
  ensure_dir(out_path.parent_path());
  write_text_file(out_path, j.dump(2) + "\n");
  out << "wrote " << entries.size() << " supports, " << organs.size() << " organs, mode " << to_string(mode)
      << " to " << out_path.string() << '\n';
  return kExitOk;
}

struct LocalizeArgs {
  std::string checkpoint, support, query, out;
  std::vector<std::string> organs;
  std::vector<double> r;
  int k = 5;
  int max_steps = 3;
  double n_mm = 6.0;
  bool no_refine = false;
  bool random_start = false;
  Common common;
};

int cmd_localize(const LocalizeArgs& a, std::ostream& out) {
  require_file(a.checkpoint, "checkpoint");
  require_file(a.support, "support descriptor");
  require_file(a.query, "query volume");
  const int jobs = effective_jobs(a.common.jobs, a.common.strict);
  const std::uint64_t seed = resolve_seed(a.common.seed);
  if (a.max_steps < 1) throw Error(ErrorCode::InvalidArgument, "--max-steps must be >= 1");

  const nn::Checkpoint ckpt = nn::load_checkpoint(a.checkpoint);
  const Vec3 r = a.r.empty() ? ckpt.r : vec3_from(a.r, "--r");
  const auto sj = parse_json_file(a.support);
  LocalizationMode mode;
  double n_mm = 0.0;
  std::vector<SupportEntry> entries;
  if (sj.is_array()) {
    // Bare descriptor: the mode follows from the landmark names.
    entries = parse_support_descriptor(sj);
    mode = LocalizationMode::Wpl;
    for (const auto& [name, _] : entries.front().landmarks) {
      if (name.find("/seg") != std::string::npos) mode = LocalizationMode::Spl;
    }
    if (mode == LocalizationMode::Spl) n_mm = a.n_mm;
  } else try {
    if (sj.at("format").get<std::string>() != "anatomap-support") {
      throw Error(ErrorCode::SchemaMismatch, a.support + " is not a support descriptor");
    }
    mode = localization_mode_from_string(sj.at("mode").get<std::string>());
    if (mode == LocalizationMode::Spl) n_mm = sj.at("n_mm").get<double>();
    entries = parse_support_descriptor(sj.at("supports"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, a.support + ": " + e.what());
  }
  if (a.k < 1 || std::size_t(a.k) > entries.size()) {
    throw Error(ErrorCode::InvalidArgument, "--k " + std::to_string(a.k) + " but the descriptor holds " +
                                                std::to_string(entries.size()) + " supports");
  }
  entries.resize(std::size_t(a.k));

  const fs::path base = fs::absolute(a.support).parent_path();
  std::vector<Volume> volumes;
  for (const auto& e : entries) {
    const fs::path p = base / e.volume;
    require_file(p, "support volume");
    volumes.push_back(read_vol1(p));
  }
  std::vector<SupportCase> cases;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    SupportCase c{&volumes[i], {}};
    for (const auto& [name, v] : entries[i].landmarks) {
      const std::string organ = name.substr(0, name.find('/'));
      if (a.organs.empty() || std::find(a.organs.begin(), a.organs.end(), organ) != a.organs.end()) {
        c.landmarks[name] = v;
      }
    }
    if (c.landmarks.empty()) throw Error(ErrorCode::EmptyInput, "no support landmarks for the requested organs");
    cases.push_back(std::move(c));
  }
  const SupportModel model = build_support_model(cases, ckpt.weights, jobs);

  const Volume query = read_vol1(a.query);
  LocateOptions opts;
  opts.max_steps = a.max_steps;
  opts.refine = !a.no_refine;
  opts.random_start = a.random_start;
  opts.seed = seed;
  opts.jobs = jobs;

  ordered_json cfg;
  cfg["command"] = "localize";
  cfg["checkpoint"] = sha256_file(nn::checkpoint_blob_path(a.checkpoint));
  cfg["support"] = sha256_file(a.support);
  cfg["query"] = sha256_file(vol1_raw_path(a.query));
  cfg["k"] = a.k;
  cfg["organs"] = a.organs;
  cfg["r"] = {r.z, r.y, r.x};
  cfg["max_steps"] = a.max_steps;
  cfg["refine"] = opts.refine;
  cfg["random_start"] = a.random_start;
  cfg["seed"] = seed;
  const std::string hash = config_hash(cfg);

  LandmarkFile f;
  f.query = fs::path(a.query).filename().string();
  f.grid = query.shape();
  f.spacing = query.spacing();
  f.mode = mode;
  f.n_mm = n_mm;
  f.k = a.k;
  f.landmarks = localize_all(query, model, ckpt.weights, r, opts);
  f.meta = meta_json(hash);
  const fs::path out_path = fs::absolute(a.out);
  ensure_dir(out_path.parent_path());
  write_text_file(out_path, landmark_file_json(f).dump(2) + "\n");
  out << "localized " << f.landmarks.size() << " landmarks in " << f.query << " (config " << hash << ")\n";
  return kExitOk;
}

struct PromptArgs {
  std::string landmarks, out, mode;
  std::vector<std::string> organs;
  int margin = 10;
  double n_mm = -1.0;
};

int cmd_prompt(const PromptArgs& a, std::ostream& out) {
  require_file(a.landmarks, "landmark file");
  if (a.margin < 0) throw Error(ErrorCode::InvalidArgument, "--margin must be >= 0");
  const LandmarkFile f = parse_landmark_file(parse_json_file(a.landmarks));
  if (!a.mode.empty() && localization_mode_from_string(a.mode) != f.mode) {
    throw Error(ErrorCode::InvalidArgument,
                "--mode " + a.mode + " but the landmarks were localized in " + to_string(f.mode) + " mode");
  }
  if (a.n_mm >= 0.0 && f.mode == LocalizationMode::Spl && a.n_mm != f.n_mm) {
    throw Error(ErrorCode::InvalidArgument, "--n " + format_double(a.n_mm) + " but the landmarks use n=" +
                                                format_double(f.n_mm) + " mm");
  }
  const auto organs = a.organs.empty() ? landmark_organs(f) : a.organs;
  const fs::path dir = fs::absolute(a.out);
  ensure_dir(dir);
  for (const auto& organ : organs) {
    const auto [points, m] = organ_points(f, organ);
    ordered_json cfg;
    cfg["command"] = "prompt";
    cfg["landmarks"] = sha256_file(a.landmarks);
    cfg["organ"] = organ;
    cfg["margin_px"] = a.margin;
    PromptSet p = organ_prompts(organ, points, f.mode, m, f.n_mm, a.margin, f.grid, f.spacing);
    p.meta = meta_json(config_hash(cfg));
    p.meta["query"] = f.query;
    p.meta["segments"] = m;
    export_prompts(p, dir / (organ + "_prompts.json"));
    out << organ << ": " << p.slices.size() << " slice prompts, " << m << " segment(s)\n";
  }
  return kExitOk;
}

struct EvalArgs {
  std::vector<std::string> landmarks, truth, organs;
  std::string out;
  int margin = 10;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.landmarks.empty()) throw Error(ErrorCode::EmptyInput, "no --landmarks given");
  if (a.landmarks.size() != a.truth.size()) {
    throw Error(ErrorCode::InvalidArgument, "--landmarks and --truth need the same number of files");
  }
  if (a.margin < 0) throw Error(ErrorCode::InvalidArgument, "--margin must be >= 0");
  ordered_json cfg;
  cfg["command"] = "eval";
  cfg["margin_px"] = a.margin;
  cfg["organs"] = a.organs;
  ordered_json inputs = ordered_json::array();
  std::vector<CaseMetrics> cases;
  for (std::size_t i = 0; i < a.landmarks.size(); ++i) {
    require_file(a.landmarks[i], "landmark file");
    require_file(a.truth[i], "ground truth");
    const LandmarkFile f = parse_landmark_file(parse_json_file(a.landmarks[i]));
    const GroundTruth truth = read_ground_truth(a.truth[i]);
    inputs.push_back({sha256_file(a.landmarks[i]), sha256_file(a.truth[i])});
    const auto organs = a.organs.empty() ? landmark_organs(f) : a.organs;
    for (const auto& organ : organs) {
      const auto [points, m] = organ_points(f, organ);
      const OrganTruth& t = truth.organ(organ);
      if (!(t.mask.shape() == f.grid)) {
        throw Error(ErrorCode::GridMismatch, a.truth[i] + ": mask grid differs from the landmark grid");
      }
      cases.push_back(evaluate_organ(t, points, f.mode, m, f.n_mm, a.margin, f.spacing).metrics);
    }
  }
  cfg["inputs"] = inputs;
  const std::string csv = report_csv(report(cases), config_hash(cfg));
  if (a.out.empty()) {
    out << csv;
  } else {
    const fs::path p = fs::absolute(a.out);
    ensure_dir(p.parent_path());
    write_text_file(p, csv);
    out << "wrote " << cases.size() << " organ cases to " << p.string() << '\n';
  }
  return kExitOk;
}

constexpr const char* kFormats = R"(File formats:
  VOL1 volume     <stem>.json {shape, spacing, domain, dtype} + <stem>.raw float32 LE, z-major
  mask            <stem>_mask_<organ>.json header + .bits (LSB-first, z-major)
  ground truth    <stem>_gt.json {version, organs: [{name, mask, voxels, extremes{role: [z,y,x]}}]}
  cohort          manifest.json {format, version, config_hash, seed, count, spec, subjects, files[{path, sha256}]}
  train config    JSON object of TrainConfig keys; unknown keys are rejected
  checkpoint      checkpoint.json (MLAM1 manifest) + checkpoint.bin float32 blob
  loss CSV        epoch,l_mse,l_ce,l_total
  support         {format, mode, n_mm, segments, subjects, supports: [{volume, landmarks{name: [z,y,x]}}], meta}
                  or the bare supports array (volume paths relative to the descriptor)
  landmarks       {format, query, grid, spacing, mode, n_mm, k, landmarks: [{name, point, coarse, steps}], meta}
  prompts         <organ>_prompts.json, see docs/prompt.schema.json
  metrics CSV     comment line, then organ,n_cases,ale_mean,ale_std,wd_mean,wd_std,iou_mean,iou_std,dsc_mean,dsc_std
Landmark names: <organ>/<role> (wpl) or <organ>/seg<K>/<role> (spl); roles z_min z_max x_min x_max y_min y_max.
Exit codes: 0 ok, 2 validation, 3 numeric failure, 4 IO.)";

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{std::string(kVersion) + ": landmark localization and box prompts for 3D volumes", "anatomap"};
  app.footer(kFormats);
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  PhantomGenArgs pg;
  auto* c_pg = app.add_subcommand("phantom-gen", "Generate a synthetic phantom cohort");
  c_pg->add_option("--spec", pg.spec, "Phantom spec JSON (default built-in layout)");
  c_pg->add_option("--count", pg.count, "Number of phantoms")->required();
  c_pg->add_option("--out", pg.out, "Output directory")->required();
  add_common(c_pg, pg.common);

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the network on a cohort");
  c_tr->add_option("--cohort", tr.cohort, "Cohort directory (phantom-gen output)")->required();
  c_tr->add_option("--config", tr.config, "Train config JSON");
  c_tr->add_option("--out", tr.out, "Output directory for checkpoint.json and loss.csv")->required();
  c_tr->add_option("--epochs", tr.epochs, "Epochs to run (overrides the config)");
  c_tr->add_option("--subjects", tr.subjects, "Use only the first N subjects");
  c_tr->add_option("--r", tr.r, "Offset bound per axis, mm (z y x)")->expected(3);
  c_tr->add_option("--resume", tr.resume, "Continue from this checkpoint");
  add_common(c_tr, tr.common);

  SupportArgs sp;
  auto* c_sp = app.add_subcommand("make-support", "Write a support descriptor from cohort ground truth");
  c_sp->add_option("--cohort", sp.cohort, "Cohort directory")->required();
  c_sp->add_option("--subjects", sp.subjects, "Subject ids (default: the first k)");
  c_sp->add_option("--k", sp.k, "Support count")->default_val(5);
  c_sp->add_option("--mode", sp.mode, "wpl or spl")->default_val("wpl");
  c_sp->add_option("--n", sp.n_mm, "SPL slicing interval, mm")->default_val(6.0);
  c_sp->add_option("--organ", sp.organs, "Organs to include (default all)");
  c_sp->add_option("--out", sp.out, "Output JSON")->required();

  LocalizeArgs lo;
  auto* c_lo = app.add_subcommand("localize", "Localize support landmarks in a query volume");
  c_lo->add_option("--checkpoint", lo.checkpoint, "Checkpoint manifest")->required();
  c_lo->add_option("--support", lo.support, "Support descriptor")->required();
  c_lo->add_option("--query", lo.query, "Query VOL1 header")->required();
  c_lo->add_option("--out", lo.out, "Output landmark JSON")->required();
  c_lo->add_option("--k", lo.k, "Supports to average")->default_val(5);
  c_lo->add_option("--organ", lo.organs, "Organs to localize (default all)");
  c_lo->add_option("--r", lo.r, "Offset bound override, mm (z y x)")->expected(3);
  c_lo->add_option("--max-steps", lo.max_steps, "Coarse agent patch evaluations")->default_val(3);
  c_lo->add_option("--n", lo.n_mm, "SPL interval recorded for a bare descriptor array, mm")->default_val(6.0);
  c_lo->add_flag("--no-refine", lo.no_refine, "Skip the multi-scale refinement");
  c_lo->add_flag("--random-start", lo.random_start, "Start every landmark at a seeded random voxel");
  add_common(c_lo, lo.common);

  PromptArgs pr;
  auto* c_pr = app.add_subcommand("prompt", "Export per-slice box prompts from localized landmarks");
  c_pr->add_option("--landmarks", pr.landmarks, "Landmark JSON (localize output)")->required();
  c_pr->add_option("--out", pr.out, "Output directory")->required();
  c_pr->add_option("--organ", pr.organs, "Organs (default all)");
  c_pr->add_option("--margin", pr.margin, "Margin per side, px")->default_val(10);
  c_pr->add_option("--mode", pr.mode, "Expected mode, wpl or spl");
  c_pr->add_option("--n", pr.n_mm, "Expected SPL interval, mm");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Score landmark predictions against ground truth");
  c_ev->add_option("--landmarks", ev.landmarks, "Landmark JSON files")->required();
  c_ev->add_option("--truth", ev.truth, "Matching ground-truth JSON files")->required();
  c_ev->add_option("--organ", ev.organs, "Organs (default all)");
  c_ev->add_option("--margin", ev.margin, "Prompt margin for the box-clipped DSC, px")->default_val(10);
  c_ev->add_option("--out", ev.out, "Metrics CSV (default stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (c_pg->parsed()) return cmd_phantom_gen(pg, out);
    if (c_tr->parsed()) return cmd_train(tr, out);
    if (c_sp->parsed()) return cmd_make_support(sp, out);
    if (c_lo->parsed()) return cmd_localize(lo, out);
    if (c_pr->parsed()) return cmd_prompt(pr, out);
    if (c_ev->parsed()) return cmd_eval(ev, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace anatomap::cli
