#include "anatomap/network.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "anatomap/util.hpp"

namespace anatomap::nn {

namespace {

constexpr const char* kFormat = "MLAM1";

std::array<int, 3> as_array3(const nlohmann::json& j) { return j.get<std::array<int, 3>>(); }

std::vector<int> conv_shape(int cout, int cin, int k) { return {cout, cin, k, k, k}; }

}  // namespace

void NetworkConfig::validate() const {
  if (patch_side < 16 || patch_side % 16 != 0) {
    throw Error(ErrorCode::ShapeMismatch, "patch_side must be a positive multiple of 16, got " +
                                              std::to_string(patch_side));
  }
  for (int c : encoder_channels)
    if (c < 1) throw Error(ErrorCode::InvalidArgument, "encoder_channels must be positive");
  for (int c : mlp_hidden)
    if (c < 1) throw Error(ErrorCode::InvalidArgument, "mlp_hidden must be positive");
  for (int c : feature_channels)
    if (c < 1) throw Error(ErrorCode::InvalidArgument, "feature_channels must be positive");
}

nlohmann::ordered_json NetworkConfig::to_json() const {
  nlohmann::ordered_json j;
  j["patch_side"] = patch_side;
  j["encoder_channels"] = encoder_channels;
  j["mlp_hidden"] = mlp_hidden;
  j["feature_channels"] = feature_channels;
  return j;
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.patch_side = j.at("patch_side").get<int>();
  c.encoder_channels = j.at("encoder_channels").get<std::array<int, 4>>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::array<int, 2>>();
  c.feature_channels = as_array3(j.at("feature_channels"));
  c.validate();
  return c;
}

std::vector<ParamInfo> parameter_layout(const NetworkConfig& c) {
  c.validate();
  std::vector<ParamInfo> out;
  auto conv = [&](const std::string& name, int cout, int cin, int k) {
    out.push_back({name + ".w", conv_shape(cout, cin, k)});
    out.push_back({name + ".b", {cout}});
  };
  auto fc = [&](const std::string& name, int cout, int cin) {
    out.push_back({name + ".w", {cout, cin}});
    out.push_back({name + ".b", {cout}});
  };
  const auto& enc = c.encoder_channels;
  for (int b = 0; b < 4; ++b) {
    const int cin = b == 0 ? 1 : enc[std::size_t(b - 1)];
    const int cout = enc[std::size_t(b)];
    conv("enc" + std::to_string(b) + ".conv1", cout, cin, 3);
    conv("enc" + std::to_string(b) + ".conv2", cout, cout, 3);
  }
  const int bottleneck = c.patch_side / 16;
  fc("mlp.fc1", c.mlp_hidden[0], enc[3] * bottleneck * bottleneck * bottleneck);
  fc("mlp.fc2", c.mlp_hidden[1], c.mlp_hidden[0]);
  fc("mlp.fc3", 3, c.mlp_hidden[1]);
  for (int j = 0; j < 4; ++j) {
    const int cin = enc[std::size_t(j == 0 ? 3 : 4 - j)];
    const int cout = enc[std::size_t(3 - j)];
    conv("dec" + std::to_string(j) + ".conv1", cout, cin, 3);
    conv("dec" + std::to_string(j) + ".conv2", cout, cout, 3);
  }
  // head i reads the decoder output at scale 1/2^i, whose width is enc[i].
  for (int i = 0; i < 3; ++i) {
    conv("head" + std::to_string(i), c.feature_channels[std::size_t(i)], enc[std::size_t(i)], 1);
  }
  return out;
}

NetworkWeights NetworkWeights::initialize(const NetworkConfig& config, std::uint64_t seed) {
  NetworkWeights w;
  w.config = config;
  const auto layout = parameter_layout(config);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    Tensor t(layout[i].shape);
    if (layout[i].shape.size() > 1) {
      const std::size_t fan_in = t.numel() / std::size_t(layout[i].shape[0]);
      // Layers without a following ReLU get unit-gain init.
      const bool linear_out = layout[i].name.rfind("head", 0) == 0 || layout[i].name == "mlp.fc3.w";
      const double stddev = std::sqrt((linear_out ? 1.0 : 2.0) / double(fan_in));
      std::mt19937_64 rng(mix_seed(seed, i));
      std::normal_distribution<double> dist(0.0, stddev);
      for (auto& v : t.values()) v = float(dist(rng));
    }
    w.params.push_back(std::move(t));
  }
  return w;
}

std::size_t NetworkWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : params) n += t.numel();
  return n;
}

bool NetworkWeights::all_finite() const {
  for (const auto& t : params)
    for (float v : t.values())
      if (!std::isfinite(v)) return false;
  return true;
}

std::vector<Var> bind_parameters(const NetworkWeights& weights, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(weights.params.size());
  for (const auto& t : weights.params) vars.emplace_back(t, requires_grad);
  return vars;
}

MedlamGraph forward_graph(const Var& input, const std::vector<Var>& params, const NetworkConfig& config) {
  const int s = config.patch_side;
  if (input.value().shape() != std::vector<int>{1, s, s, s}) {
    throw Error(ErrorCode::ShapeMismatch, "network input must be (1," + std::to_string(s) + "," + std::to_string(s) +
                                              "," + std::to_string(s) + "), got " +
                                              shape_string(input.value().shape()));
  }
  if (params.size() != parameter_layout(config).size()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter count does not match the architecture");
  }
  std::size_t at = 0;
  auto next = [&]() -> const Var& { return params[at++]; };
  auto conv_relu = [&](const Var& x) {
    const Var& w = next();
    const Var& b = next();
    return relu(conv3(x, w, b, 1, 1));
  };

  std::array<Var, 4> skips;
  Var x = input;
  for (int b = 0; b < 4; ++b) {
    x = conv_relu(x);
    x = conv_relu(x);
    skips[std::size_t(b)] = x;
    x = avg_pool2(x);
  }
  const Var bottleneck = x;

  MedlamGraph out;
  Var h = reshape(bottleneck, {int(bottleneck.value().numel())});
  for (int layer = 0; layer < 3; ++layer) {
    const Var& w = next();
    const Var& b = next();
    h = linear(h, w, b);
    if (layer < 2) h = relu(h);
  }
  out.p = h;

  std::array<Var, 3> decoded;
  Var d = bottleneck;
  for (int j = 0; j < 4; ++j) {
    d = conv_relu(d);
    d = conv_relu(d);
    d = add(upsample2(d), skips[std::size_t(3 - j)]);
    if (j >= 1) decoded[std::size_t(3 - j)] = d;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const Var& w = next();
    const Var& b = next();
    out.features[i] = l2_normalize_channels(conv3(decoded[i], w, b, 1, 0));
  }
  return out;
}

Tensor patch_tensor(const Grid3& grid) {
  const Shape3& s = grid.shape();
  return Tensor({1, s.z, s.y, s.x}, std::vector<float>(grid.data().begin(), grid.data().end()));
}

MedlamOutput forward_medlam(const Patch& patch, const NetworkWeights& weights) {
  const Shape3& s = patch.size();
  if (s.z % 16 || s.y % 16 || s.x % 16) {
    throw Error(ErrorCode::ShapeMismatch, "patch sides must be divisible by 16");
  }
  const auto params = bind_parameters(weights, false);
  const auto g = forward_graph(Var(patch_tensor(patch.grid)), params, weights.config);
  MedlamOutput out;
  out.p = {g.p.value()[0], g.p.value()[1], g.p.value()[2]};
  for (std::size_t i = 0; i < 3; ++i) out.features[i] = g.features[i].value();
  return out;
}

AdamState AdamState::zeros_like(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i]) || !params[i].same_shape(state.m[i]) || !params[i].same_shape(state.v[i])) {
      throw Error(ErrorCode::ShapeMismatch, "adam: shape mismatch at parameter " + std::to_string(i));
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.numel(); ++k) {
      const double gk = g[k];
      const double mk = config.beta1 * m[k] + (1.0 - config.beta1) * gk;
      const double vk = config.beta2 * v[k] + (1.0 - config.beta2) * gk * gk;
      m[k] = float(mk);
      v[k] = float(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      p[k] = float(double(p[k]) - config.lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

std::filesystem::path checkpoint_blob_path(const std::filesystem::path& manifest_path) {
  auto p = manifest_path;
  p.replace_extension(".bin");
  return p;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto layout = parameter_layout(ckpt.weights.config);
  if (layout.size() != ckpt.weights.params.size()) {
    throw Error(ErrorCode::ShapeManifestMismatch, "weights do not match their architecture");
  }
  std::vector<float> blob;
  blob.reserve(ckpt.weights.parameter_count() * (ckpt.adam ? 3 : 1));
  auto append = [&blob](const std::vector<Tensor>& ts) {
    for (const auto& t : ts) blob.insert(blob.end(), t.values().begin(), t.values().end());
  };
  append(ckpt.weights.params);
  if (ckpt.adam) {
    append(ckpt.adam->m);
    append(ckpt.adam->v);
  }
  const auto bytes = std::as_bytes(std::span<const float>(blob));

  nlohmann::ordered_json m;
  m["format"] = kFormat;
  m["version"] = kVersion;
  m["architecture"] = ckpt.weights.config.to_json();
  m["r"] = {ckpt.r.z, ckpt.r.y, ckpt.r.x};
  m["epoch"] = ckpt.epoch;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (ckpt.weights.params[i].shape() != layout[i].shape) {
      throw Error(ErrorCode::ShapeManifestMismatch, layout[i].name + " has shape " +
                                                        shape_string(ckpt.weights.params[i].shape()));
    }
    tensors.push_back({{"name", layout[i].name}, {"shape", layout[i].shape}});
  }
  m["tensors"] = tensors;
  if (ckpt.adam) {
    m["optimizer"] = {{"kind", "adam"}, {"t", ckpt.adam->t}};
  } else {
    m["optimizer"] = nullptr;
  }
  m["train_config"] = ckpt.train_config;
  m["blob"] = {{"file", checkpoint_blob_path(path).filename().string()},
               {"bytes", bytes.size()},
               {"sha256", sha256_hex(bytes)}};
  write_file_bytes(checkpoint_blob_path(path), bytes);
  write_text_file(path, m.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, path.string() + ": unreadable manifest: " + e.what());
  }
  Checkpoint ckpt;
  std::vector<ParamInfo> layout;
  bool has_adam = false;
  std::size_t expected_bytes = 0;
  std::string expected_hash;
  try {
    if (m.at("format").get<std::string>() != kFormat) {
      throw Error(ErrorCode::CorruptCheckpoint, path.string() + ": not an MLAM1 manifest");
    }
    ckpt.weights.config = NetworkConfig::from_json(m.at("architecture"));
    const auto r = m.at("r").get<std::array<double, 3>>();
    ckpt.r = {r[0], r[1], r[2]};
    ckpt.epoch = m.at("epoch").get<int>();
    ckpt.train_config = m.value("train_config", nlohmann::json::object());
    layout = parameter_layout(ckpt.weights.config);
    const auto& tensors = m.at("tensors");
    if (tensors.size() != layout.size()) {
      throw Error(ErrorCode::ShapeManifestMismatch, path.string() + ": manifest lists " +
                                                        std::to_string(tensors.size()) + " tensors, architecture has " +
                                                        std::to_string(layout.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto name = tensors[i].at("name").get<std::string>();
      const auto shape = tensors[i].at("shape").get<std::vector<int>>();
      if (name != layout[i].name || shape != layout[i].shape) {
        throw Error(ErrorCode::ShapeManifestMismatch, path.string() + ": tensor " + std::to_string(i) + " is " + name +
                                                          shape_string(shape) + ", architecture expects " +
                                                          layout[i].name + shape_string(layout[i].shape));
      }
    }
    if (!m.at("optimizer").is_null()) {
      has_adam = true;
      ckpt.adam = AdamState{};
      ckpt.adam->t = m.at("optimizer").at("t").get<std::int64_t>();
    }
    expected_bytes = m.at("blob").at("bytes").get<std::size_t>();
    expected_hash = m.at("blob").at("sha256").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, path.string() + ": malformed manifest: " + e.what());
  }

  std::vector<std::byte> bytes;
  try {
    bytes = read_file_bytes(checkpoint_blob_path(path));
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptCheckpoint, e.what());
  }
  std::size_t count = 0;
  for (const auto& info : layout) count += shape_numel(info.shape);
  const std::size_t floats = count * (has_adam ? 3 : 1);
  if (bytes.size() != expected_bytes || bytes.size() != floats * sizeof(float)) {
    throw Error(ErrorCode::CorruptCheckpoint, path.string() + ": blob has " + std::to_string(bytes.size()) +
                                                  " bytes, expected " + std::to_string(floats * sizeof(float)));
  }
  if (sha256_hex(bytes) != expected_hash) {
    throw Error(ErrorCode::CorruptCheckpoint, path.string() + ": blob hash mismatch");
  }
  const auto* src = reinterpret_cast<const float*>(bytes.data());
  auto take = [&](std::vector<Tensor>& out) {
    for (const auto& info : layout) {
      Tensor t(info.shape);
      std::memcpy(t.data(), src, t.numel() * sizeof(float));
      src += t.numel();
      out.push_back(std::move(t));
    }
  };
  take(ckpt.weights.params);
  if (has_adam) {
    take(ckpt.adam->m);
    take(ckpt.adam->v);
  }
  return ckpt;
}

}  // namespace anatomap::nn
