#pragma once

#include "anatomap/geometry.hpp"
#include "anatomap/tensor.hpp"

// Forward and backward kernels for the differentiable operations. Each
// backward routine returns exact gradients of a scalar loss with respect to
// the forward inputs, given the gradient with respect to the forward output.
namespace anatomap::nn::kernels {

// 3D cross-correlation. x: (Ci, Z, Y, X); w: (Co, Ci, K, K, K); b: (Co).
Tensor conv3_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

struct Conv3Grads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};
/// dx is left empty when need_dx is false.
Conv3Grads conv3_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int pad,
                          bool need_dx = true);

// Stride-2 average pooling over 2x2x2 cells; spatial dims must be even.
Tensor avg_pool2_forward(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& dy);

// Nearest-neighbour x2 upsampling.
Tensor upsample2_forward(const Tensor& x);
Tensor upsample2_backward(const Tensor& dy);

// y = W x + b with x: (In), W: (Out, In), b: (Out).
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
struct LinearGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);
Tensor tanh_forward(const Tensor& x);
Tensor tanh_backward(const Tensor& y, const Tensor& dy);

inline constexpr float kNormEps = 1e-8f;

/// Scales each spatial location's channel vector (axis 0) to unit length;
/// vectors shorter than kNormEps are divided by kNormEps instead.
Tensor l2_normalize_channels_forward(const Tensor& x);
Tensor l2_normalize_channels_backward(const Tensor& x, const Tensor& y, const Tensor& dy);

/// Softmax over every element of a single-channel map, max-subtracted.
Tensor softmax_spatial_forward(const Tensor& x);
Tensor softmax_spatial_backward(const Tensor& y, const Tensor& dy);

/// 1x1x1 convolution of feature map F (C, Z, Y, X) with a single kernel v (C).
Tensor dot_map_forward(const Tensor& v, const Tensor& f);
struct DotMapGrads {
  Tensor dv;
  Tensor df;
};
DotMapGrads dot_map_backward(const Tensor& v, const Tensor& f, const Tensor& dy);

/// Channel vector of F (C, Z, Y, X) at one voxel.
Tensor gather_channels_forward(const Tensor& f, Voxel at);
Tensor gather_channels_backward(const std::vector<int>& f_shape, Voxel at, const Tensor& dy);

inline constexpr double kProbClamp = 1e-12;

/// -log S[hot] - sum_{c != hot} log(1 - S[c]), with S clamped to
/// [1e-12, 1 - 1e-12] before the logs (clamped entries receive zero gradient).
double bce_onehot_forward(const Tensor& s, std::size_t hot);
Tensor bce_onehot_backward(const Tensor& s, std::size_t hot, double dloss);

}  // namespace anatomap::nn::kernels
