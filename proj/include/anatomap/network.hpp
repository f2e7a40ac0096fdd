#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anatomap/autodiff.hpp"
#include "anatomap/volume.hpp"

namespace anatomap::nn {

/// Architecture hyper-parameters. The encoder halves the patch four times, so
/// the patch side must be divisible by 16.
struct NetworkConfig {
  int patch_side = 32;
  std::array<int, 4> encoder_channels{8, 16, 32, 64};
  std::array<int, 2> mlp_hidden{64, 32};
  /// Feature head widths C0, C1, C2 (full, half and quarter resolution).
  std::array<int, 3> feature_channels{8, 16, 32};

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
};

/// Parameter layout in manifest order.
std::vector<ParamInfo> parameter_layout(const NetworkConfig& config);

struct NetworkWeights {
  NetworkConfig config;
  std::vector<Tensor> params;  // parameter_layout order

  /// He-normal weights, zero biases.
  static NetworkWeights initialize(const NetworkConfig& config, std::uint64_t seed);
  std::size_t parameter_count() const;
  bool all_finite() const;
};

using LatentCoord = Vec3;

/// F0 (C0, S, S, S), F1 (C1, S/2, ...), F2 (C2, S/4, ...), each channel-normalised.
using MultiScaleFeatures = std::array<Tensor, 3>;

struct MedlamOutput {
  LatentCoord p;
  MultiScaleFeatures features;
};

/// Differentiable form of the network used by training and gradient checks.
struct MedlamGraph {
  Var p;                    // (3)
  std::array<Var, 3> features;
};

std::vector<Var> bind_parameters(const NetworkWeights& weights, bool requires_grad);

/// input: (1, S, S, S) with S == config.patch_side.
MedlamGraph forward_graph(const Var& input, const std::vector<Var>& params, const NetworkConfig& config);

/// Inference on a cubic patch; no tape is recorded.
MedlamOutput forward_medlam(const Patch& patch, const NetworkWeights& weights);

Tensor patch_tensor(const Grid3& grid);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;

  static AdamState zeros_like(const std::vector<Tensor>& params);
};

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& config);

/// MLAM1 checkpoint: JSON manifest at `path` plus a little-endian float32 blob
/// (parameters, then Adam m and v when present) at checkpoint_blob_path(path).
struct Checkpoint {
  NetworkWeights weights;
  std::optional<AdamState> adam;
  /// Offset range bound used by training, mm; inference reuses it.
  Vec3 r{192.0, 192.0, 192.0};
  int epoch = 0;
  nlohmann::json train_config = nlohmann::json::object();
};

std::filesystem::path checkpoint_blob_path(const std::filesystem::path& manifest_path);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace anatomap::nn
