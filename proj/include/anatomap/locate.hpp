#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anatomap/network.hpp"
#include "anatomap/phantom.hpp"

namespace anatomap {

/// Averaged support representation of one landmark.
struct LandmarkModel {
  std::string name;
  nn::LatentCoord p;
  /// Unit-norm feature vectors at scales 0, 1, 2.
  std::array<std::vector<float>, 3> f;
  int k = 0;
};

struct SupportModel {
  std::vector<LandmarkModel> landmarks;  // sorted by name
  int k = 0;

  bool contains(const std::string& name) const;
  const LandmarkModel& at(const std::string& name) const;
  /// Landmarks whose name starts with "<organ>/".
  std::vector<const LandmarkModel*> organ(const std::string& organ) const;
  std::vector<std::string> organs() const;
};

struct SupportCase {
  const Volume* volume = nullptr;
  std::map<std::string, Voxel> landmarks;
};

/// Network outputs at the patch centred on `at`. Raw-HU volumes are
/// normalised first.
nn::MedlamOutput embed_at(const Volume& volume, Voxel at, const nn::NetworkWeights& weights);

/// Mean of equally sized feature vectors, rescaled to unit norm.
std::vector<float> average_features(const std::vector<std::vector<float>>& vectors);

/// Averages latent coordinates and features over k supports of one landmark.
/// Throws LandmarkOutOfBounds for a landmark outside its volume.
LandmarkModel build_landmark_model(const std::string& name,
                                   const std::vector<std::pair<const Volume*, Voxel>>& supports,
                                   const nn::NetworkWeights& weights);

/// Every landmark named in the first support must appear in all of them.
SupportModel build_support_model(const std::vector<SupportCase>& supports, const nn::NetworkWeights& weights,
                                 int jobs = 1);

/// Network outputs per patch centre for one query volume; safe to share
/// between threads.
class EmbeddingCache {
 public:
  EmbeddingCache(const Volume& volume, const nn::NetworkWeights& weights);
  const nn::MedlamOutput& embed(Voxel at);
  const Volume& volume() const { return volume_; }
  const nn::NetworkWeights& weights() const { return weights_; }

 private:
  Volume volume_;
  const nn::NetworkWeights& weights_;
  std::mutex mu_;
  std::map<Voxel, nn::MedlamOutput> cache_;
};

struct AgentState {
  Voxel position;
  std::vector<Vec3> steps_mm;
  bool converged = false;
};

/// Latent-offset agent: move by r*tanh(p_s - p_q) (mm to voxels, half rounds
/// toward lower) until every axis moves less than one voxel or max_steps
/// patches have been evaluated.
AgentState coarse_localize(EmbeddingCache& query, const LandmarkModel& model, const Vec3& r, Voxel start,
                           int max_steps = 3);
AgentState coarse_localize(const Volume& query, const LandmarkModel& model, const nn::NetworkWeights& weights,
                           const Vec3& r, Voxel start, int max_steps = 3);

/// Summed raw dot-product maps at the three scales (nearest upsampled to full
/// resolution) for the patch at `coarse`; the first maximum in z-major order,
/// mapped back to volume coordinates.
Voxel mss_refine(const Volume& query, Voxel coarse, const LandmarkModel& model, const nn::NetworkWeights& weights);
Voxel mss_refine(EmbeddingCache& query, Voxel coarse, const LandmarkModel& model);

/// The aggregated similarity map itself, patch coordinates.
Grid3 similarity_map(const nn::MultiScaleFeatures& features, const LandmarkModel& model);

struct LocateOptions {
  int max_steps = 3;
  bool refine = true;
  bool random_start = false;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct LandmarkEstimate {
  std::string name;
  Voxel coarse;
  Voxel point;
  int steps = 0;
};

enum class LocalizationMode { Wpl, Spl };
const char* to_string(LocalizationMode mode);
LocalizationMode localization_mode_from_string(const std::string& s);

/// Segment count implied by an organ's landmark names ("organ/segK/role").
int organ_segment_count(const SupportModel& model, const std::string& organ);

/// Localizes the organ's 6 (WPL) or 6m (SPL) landmarks, ordered by segment
/// then extreme role.
/// Throws GroupingError if the model set has the wrong cardinality.
std::vector<LandmarkEstimate> localize_organ_points(const Volume& query, const SupportModel& model,
                                                    const std::string& organ, LocalizationMode mode,
                                                    const nn::NetworkWeights& weights, const Vec3& r,
                                                    const LocateOptions& options = {});

/// Localizes every landmark of `model` through one shared embedding cache.
std::vector<LandmarkEstimate> localize_all(const Volume& query, const SupportModel& model,
                                           const nn::NetworkWeights& weights, const Vec3& r,
                                           const LocateOptions& options = {});

// Landmark naming: "<organ>/<role>" for WPL and "<organ>/seg<K>/<role>" for SPL.
std::string wpl_landmark_name(const std::string& organ, ExtremeRole role);
std::string spl_landmark_name(const std::string& organ, int segment, ExtremeRole role);

/// Segment count for SPL over a support cohort: computed from the smallest
/// organ span among the supports.
int cohort_segment_count(const std::vector<const Mask*>& masks, const Spacing& spacing, double n_mm);

/// Ground-truth landmarks of one organ: WPL extremes, or SPL extremes of m
/// segments.
std::map<std::string, Voxel> organ_landmarks(const OrganTruth& truth, LocalizationMode mode, int m);

/// Support descriptor: [{"volume": path, "landmarks": {name: [z,y,x]}}].
struct SupportEntry {
  std::string volume;
  std::map<std::string, Voxel> landmarks;
};
nlohmann::ordered_json support_descriptor_json(const std::vector<SupportEntry>& entries);
std::vector<SupportEntry> parse_support_descriptor(const nlohmann::json& j);

}  // namespace anatomap
