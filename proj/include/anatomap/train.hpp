#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anatomap/network.hpp"
#include "anatomap/volume.hpp"

namespace anatomap {

using Offset = Vec3;

struct TrainConfig {
  /// Offset range bound, mm, per axis.
  Vec3 r{192.0, 192.0, 192.0};
  int patch_side = 32;
  int large_patch_side = 48;
  int batch_size = 8;
  int epochs = 30;
  double learning_rate = 1e-3;
  /// MSS points drawn from each of x_q and x_s.
  int mss_points = 4;
  /// Points are drawn at least this many voxels away from the patch faces.
  int mss_margin = 4;
  int mss_max_tries = 20;
  /// Similarity maps are divided by this before the spatial softmax.
  double mss_temperature = 1.0;
  /// Weight of the offset loss in the objective; the similarity loss has weight 1.
  double mse_weight = 1.0;
  /// Training pairs drawn from every volume per epoch.
  int pairs_per_volume = 1;
  AugmentRanges augment;
  std::uint64_t seed = 0;
  std::array<int, 4> encoder_channels{8, 16, 32, 64};
  std::array<int, 2> mlp_hidden{64, 32};
  std::array<int, 3> feature_channels{8, 16, 32};

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
  nn::NetworkConfig network_config() const;
  nlohmann::ordered_json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// A point used by the similarity loss: `src` in the original small patch and
/// its image `dst` (continuous) in the augmented small patch.
struct MssPoint {
  Voxel src;
  Vec3 dst;
};

struct SamplePair {
  Patch xq, xs;          // original small patches
  Patch xq_aug, xs_aug;  // small crops of the augmented large patches
  AugmentTransform tq, ts;  // large-patch augmentations
  Voxel cq, cs;          // centroids of xq and xs in volume coordinates
  Spacing e;
  std::vector<MssPoint> q_points, s_points;
};

/// Two large patches at uniform random centres (fully inside the volume); one
/// small crop from each original and from each augmented large patch.
/// Throws VolumeTooSmall when the volume cannot hold a large patch.
SamplePair sample_training_pair(const Volume& volume, const TrainConfig& config, std::uint64_t seed);

/// d' = (c_s - c_q) * e.
Offset offset_ground_truth(Voxel c_q, Voxel c_s, const Spacing& e);

/// d = r * tanh(p_s - p_q), strictly inside (-r, r).
Offset predict_offset(const nn::LatentCoord& p_q, const nn::LatentCoord& p_s, const Vec3& r);
nn::Var predict_offset(const nn::Var& p_q, const nn::Var& p_s, const Vec3& r);

/// Squared L2 norm of the difference.
double loss_uam(const Offset& d_pred, const Offset& d_true);
nn::Var loss_uam(const nn::Var& d_pred, const Offset& d_true);

/// Hot voxel round(c'/2^i) (half rounds up), clamped into map_shape. Throws
/// PointOutsidePatch when c' does not round into the full-resolution patch.
Voxel mss_target_voxel(const Vec3& c_aug, int scale, Shape3 map_shape);
nn::Tensor mss_target(const Vec3& c_aug, int scale, Shape3 map_shape);

/// Feature voxel of an original-patch point at scale i.
Voxel mss_source_voxel(Voxel c, int scale, Shape3 map_shape);

/// Similarity loss: per point and scale, softmax of the dot-product map of the
/// source feature against F', binary cross-entropy with the one-hot target;
/// summed over scales, averaged over points.
nn::Var loss_mss(const std::array<nn::Var, 3>& f, const std::array<nn::Var, 3>& f_aug,
                 const std::vector<MssPoint>& points, double temperature = 1.0);

inline double loss_total(double l_uam, double l_mss) { return l_uam + l_mss; }

struct EpochLoss {
  int epoch = 0;
  double l_mse = 0.0;
  double l_ce = 0.0;
  double l_total = 0.0;
};

struct PairLoss {
  double l_mse = 0.0;
  double l_ce = 0.0;
  std::vector<nn::Tensor> grads;
};

/// Loss and parameter gradients for one pair.
/// l_mse and l_ce are reported unweighted.
PairLoss pair_loss(const SamplePair& pair, const nn::NetworkWeights& weights, const Vec3& r, bool with_grads,
                   double mss_temperature = 1.0, double mse_weight = 1.0);

struct TrainOptions {
  int jobs = 1;
  /// Continue from this checkpoint; epoch numbering carries on.
  std::optional<nn::Checkpoint> resume;
  std::function<void(const EpochLoss&, const nn::Checkpoint&)> on_epoch;
};

struct TrainResult {
  nn::Checkpoint checkpoint;
  std::vector<EpochLoss> history;
};

/// Raw-HU volumes are normalised first. Deterministic in config.seed for any
/// job count (per-pair gradients are reduced in a fixed order). Throws
/// NanLoss on a non-finite batch loss.
TrainResult train(const std::vector<Volume>& cohort, const TrainConfig& config, const TrainOptions& options = {});

std::string loss_history_csv(const std::vector<EpochLoss>& history);

}  // namespace anatomap
