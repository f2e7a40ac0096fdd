#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "anatomap/error.hpp"
#include "anatomap/locate.hpp"

namespace anatomap::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

int exit_code(ErrorCode code);

/// Runs one subcommand; args exclude the program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// First 16 hex digits of the SHA-256 of the compact JSON dump.
std::string config_hash(const nlohmann::ordered_json& config);

/// Seed from --seed, else ANATOMAP_SEED, else 0.
std::uint64_t resolve_seed(const std::string& flag_value);

struct CohortSubject {
  std::string id;
  std::filesystem::path volume;        // absolute
  std::filesystem::path ground_truth;  // absolute
};

/// Reads `<dir>/manifest.json` written by phantom-gen.
std::vector<CohortSubject> read_cohort(const std::filesystem::path& dir);

/// Landmark predictions for one query volume.
struct LandmarkFile {
  std::string query;
  Shape3 grid{};
  Spacing spacing;
  LocalizationMode mode = LocalizationMode::Wpl;
  double n_mm = 0.0;
  int k = 0;
  std::vector<LandmarkEstimate> landmarks;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

nlohmann::ordered_json landmark_file_json(const LandmarkFile& file);
LandmarkFile parse_landmark_file(const nlohmann::json& j);

/// Organs named in the landmarks, sorted.
std::vector<std::string> landmark_organs(const LandmarkFile& file);

/// One organ's points in segment-major, role-minor order plus the segment
/// count (1 for WPL). Throws GroupingError on a missing landmark.
std::pair<std::vector<Voxel>, int> organ_points(const LandmarkFile& file, const std::string& organ);

}  // namespace anatomap::cli
