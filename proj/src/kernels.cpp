#include "anatomap/kernels.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace anatomap::nn::kernels {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct ConvGeom {
  int ci, z, y, x;  // input
  int co, k;
  int stride, pad;
  int zo, yo, xo;  // output
  std::size_t rows() const { return std::size_t(ci) * k * k * k; }
  std::size_t cols() const { return std::size_t(zo) * yo * xo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

ConvGeom conv_geom(const std::vector<int>& xs, const std::vector<int>& ws, int stride, int pad) {
  if (xs.size() != 4) throw Error(ErrorCode::ShapeMismatch, "conv3 input must be (C, Z, Y, X), got " + shape_string(xs));
  if (ws.size() != 5 || ws[2] != ws[3] || ws[3] != ws[4]) {
    throw Error(ErrorCode::ShapeMismatch, "conv3 kernel must be (Co, Ci, K, K, K), got " + shape_string(ws));
  }
  if (ws[1] != xs[0]) throw Error(ErrorCode::ShapeMismatch, "conv3 kernel input channels do not match input");
  if (stride < 1 || pad < 0) throw Error(ErrorCode::ShapeMismatch, "conv3 stride must be >= 1 and pad >= 0");
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad, 0, 0, 0};
  for (int d : {g.z, g.y, g.x}) {
    if (d + 2 * pad < g.k) throw Error(ErrorCode::ShapeMismatch, "conv3 kernel larger than padded input");
  }
  g.zo = (g.z + 2 * pad - g.k) / stride + 1;
  g.yo = (g.y + 2 * pad - g.k) / stride + 1;
  g.xo = (g.x + 2 * pad - g.k) / stride + 1;
  return g;
}

void im2col(const ConvGeom& g, const float* x, float* col) {
  const std::size_t n = g.cols();
  std::size_t row = 0;
  for (int c = 0; c < g.ci; ++c)
    for (int kz = 0; kz < g.k; ++kz)
      for (int ky = 0; ky < g.k; ++ky)
        for (int kx = 0; kx < g.k; ++kx, ++row) {
          float* dst_row = col + row * n;
          // Output x-range whose input index stays inside [0, X).
          int ox_lo = 0, ox_hi = g.xo;  // [lo, hi)
          if (g.stride == 1) {
            ox_lo = std::clamp(g.pad - kx, 0, g.xo);
            ox_hi = std::clamp(g.x + g.pad - kx, ox_lo, g.xo);
          }
          for (int oz = 0; oz < g.zo; ++oz) {
            const int iz = oz * g.stride - g.pad + kz;
            for (int oy = 0; oy < g.yo; ++oy) {
              const int iy = oy * g.stride - g.pad + ky;
              float* dst = dst_row + (std::size_t(oz) * g.yo + oy) * g.xo;
              if (iz < 0 || iz >= g.z || iy < 0 || iy >= g.y) {
                std::memset(dst, 0, sizeof(float) * std::size_t(g.xo));
                continue;
              }
              const float* src = x + ((std::size_t(c) * g.z + iz) * g.y + iy) * g.x;
              if (g.stride == 1) {
                std::fill(dst, dst + ox_lo, 0.0f);
                if (ox_hi > ox_lo) std::memcpy(dst + ox_lo, src + (ox_lo - g.pad + kx), sizeof(float) * std::size_t(ox_hi - ox_lo));
                std::fill(dst + ox_hi, dst + g.xo, 0.0f);
              } else {
                for (int ox = 0; ox < g.xo; ++ox) {
                  const int ix = ox * g.stride - g.pad + kx;
                  dst[ox] = (ix >= 0 && ix < g.x) ? src[ix] : 0.0f;
                }
              }
            }
          }
        }
}

void col2im(const ConvGeom& g, const float* col, float* dx) {
  const std::size_t n = g.cols();
  std::size_t row = 0;
  for (int c = 0; c < g.ci; ++c)
    for (int kz = 0; kz < g.k; ++kz)
      for (int ky = 0; ky < g.k; ++ky)
        for (int kx = 0; kx < g.k; ++kx, ++row) {
          const float* src_row = col + row * n;
          for (int oz = 0; oz < g.zo; ++oz) {
            const int iz = oz * g.stride - g.pad + kz;
            if (iz < 0 || iz >= g.z) continue;
            for (int oy = 0; oy < g.yo; ++oy) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.y) continue;
              const float* src = src_row + (std::size_t(oz) * g.yo + oy) * g.xo;
              float* dst = dx + ((std::size_t(c) * g.z + iz) * g.y + iy) * g.x;
              for (int ox = 0; ox < g.xo; ++ox) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix >= 0 && ix < g.x) dst[ix] += src[ox];
              }
            }
          }
        }
}

void require_spatial4(const Tensor& t, const char* op) {
  if (t.rank() != 4) throw Error(ErrorCode::ShapeMismatch, std::string(op) + " expects (C, Z, Y, X)");
}

}  // namespace

// ---------------------------------------------------------------------------
// conv3

Tensor conv3_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const ConvGeom g = conv_geom(x.shape(), w.shape(), stride, pad);
  if (int(b.numel()) != g.co) throw Error(ErrorCode::ShapeMismatch, "conv3 bias length must equal output channels");
  Tensor y({g.co, g.zo, g.yo, g.xo});
  const std::size_t rows = g.rows(), n = g.cols();
  std::vector<float> col_storage;
  const float* col = x.data();
  if (!g.pointwise()) {
    col_storage.resize(rows * n);
    im2col(g, x.data(), col_storage.data());
    col = col_storage.data();
  }
  CMapR wm(w.data(), g.co, Eigen::Index(rows));
  CMapR cm(col, Eigen::Index(rows), Eigen::Index(n));
  MapR ym(y.data(), g.co, Eigen::Index(n));
  ym.noalias() = wm * cm;
  for (int o = 0; o < g.co; ++o) ym.row(o).array() += b[std::size_t(o)];
  return y;
}

Conv3Grads conv3_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int pad, bool need_dx) {
  const ConvGeom g = conv_geom(x.shape(), w.shape(), stride, pad);
  if (dy.shape() != std::vector<int>{g.co, g.zo, g.yo, g.xo}) {
    throw Error(ErrorCode::ShapeMismatch, "conv3 output gradient has the wrong shape");
  }
  const std::size_t rows = g.rows(), n = g.cols();
  std::vector<float> col_storage;
  const float* col = x.data();
  if (!g.pointwise()) {
    col_storage.resize(rows * n);
    im2col(g, x.data(), col_storage.data());
    col = col_storage.data();
  }
  CMapR dym(dy.data(), g.co, Eigen::Index(n));
  CMapR cm(col, Eigen::Index(rows), Eigen::Index(n));
  CMapR wm(w.data(), g.co, Eigen::Index(rows));

  Conv3Grads grads{need_dx ? Tensor(x.shape()) : Tensor(), Tensor(w.shape()), Tensor({g.co})};
  MapR dwm(grads.dw.data(), g.co, Eigen::Index(rows));
  dwm.noalias() = dym * cm.transpose();
  for (int o = 0; o < g.co; ++o) {
    double acc = 0.0;
    const float* r = dy.data() + std::size_t(o) * n;
    for (std::size_t i = 0; i < n; ++i) acc += r[i];
    grads.db[std::size_t(o)] = float(acc);
  }
  if (!need_dx) return grads;
  if (g.pointwise()) {
    MapR dxm(grads.dx.data(), Eigen::Index(rows), Eigen::Index(n));
    dxm.noalias() = wm.transpose() * dym;
  } else {
    std::vector<float> dcol(rows * n);
    MapR dcm(dcol.data(), Eigen::Index(rows), Eigen::Index(n));
    dcm.noalias() = wm.transpose() * dym;
    col2im(g, dcol.data(), grads.dx.data());
  }
  return grads;
}

// ---------------------------------------------------------------------------
// pooling / upsampling

Tensor avg_pool2_forward(const Tensor& x) {
  require_spatial4(x, "avg_pool2");
  const int c = x.dim(0), z = x.dim(1), y = x.dim(2), xx = x.dim(3);
  if (z % 2 || y % 2 || xx % 2) throw Error(ErrorCode::ShapeMismatch, "avg_pool2 needs even spatial dims");
  Tensor out({c, z / 2, y / 2, xx / 2});
  const int z2 = z / 2, y2 = y / 2, x2 = xx / 2;
  for (int ch = 0; ch < c; ++ch)
    for (int k = 0; k < z2; ++k)
      for (int j = 0; j < y2; ++j)
        for (int i = 0; i < x2; ++i) {
          float acc = 0.0f;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy) {
              const float* src = x.data() + ((std::size_t(ch) * z + 2 * k + dz) * y + 2 * j + dy) * xx + 2 * i;
              acc += src[0] + src[1];
            }
          out[((std::size_t(ch) * z2 + k) * y2 + j) * x2 + i] = acc * 0.125f;
        }
  return out;
}

Tensor avg_pool2_backward(const Tensor& dy) {
  require_spatial4(dy, "avg_pool2_backward");
  const int c = dy.dim(0), z2 = dy.dim(1), y2 = dy.dim(2), x2 = dy.dim(3);
  const int z = 2 * z2, y = 2 * y2, xx = 2 * x2;
  Tensor dx({c, z, y, xx});
  for (int ch = 0; ch < c; ++ch)
    for (int k = 0; k < z; ++k)
      for (int j = 0; j < y; ++j) {
        const float* src = dy.data() + ((std::size_t(ch) * z2 + k / 2) * y2 + j / 2) * x2;
        float* dst = dx.data() + ((std::size_t(ch) * z + k) * y + j) * xx;
        for (int i = 0; i < xx; ++i) dst[i] = src[i / 2] * 0.125f;
      }
  return dx;
}

Tensor upsample2_forward(const Tensor& x) {
  require_spatial4(x, "upsample2");
  const int c = x.dim(0), z = x.dim(1), y = x.dim(2), xx = x.dim(3);
  Tensor out({c, 2 * z, 2 * y, 2 * xx});
  for (int ch = 0; ch < c; ++ch)
    for (int k = 0; k < 2 * z; ++k)
      for (int j = 0; j < 2 * y; ++j) {
        const float* src = x.data() + ((std::size_t(ch) * z + k / 2) * y + j / 2) * xx;
        float* dst = out.data() + ((std::size_t(ch) * 2 * z + k) * 2 * y + j) * 2 * xx;
        for (int i = 0; i < 2 * xx; ++i) dst[i] = src[i / 2];
      }
  return out;
}

Tensor upsample2_backward(const Tensor& dy) {
  require_spatial4(dy, "upsample2_backward");
  const int c = dy.dim(0), z = dy.dim(1), y = dy.dim(2), xx = dy.dim(3);
  if (z % 2 || y % 2 || xx % 2) throw Error(ErrorCode::ShapeMismatch, "upsample2 gradient needs even dims");
  Tensor dx({c, z / 2, y / 2, xx / 2});
  for (int ch = 0; ch < c; ++ch)
    for (int k = 0; k < z; ++k)
      for (int j = 0; j < y; ++j) {
        const float* src = dy.data() + ((std::size_t(ch) * z + k) * y + j) * xx;
        float* dst = dx.data() + ((std::size_t(ch) * (z / 2) + k / 2) * (y / 2) + j / 2) * (xx / 2);
        for (int i = 0; i < xx; ++i) dst[i / 2] += src[i];
      }
  return dx;
}

// ---------------------------------------------------------------------------
// dense

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || std::size_t(w.dim(1)) != x.numel() || std::size_t(w.dim(0)) != b.numel()) {
    throw Error(ErrorCode::ShapeMismatch, "linear: weight " + shape_string(w.shape()) + " incompatible with input " +
                                              shape_string(x.shape()));
  }
  const int out = w.dim(0), in = w.dim(1);
  Tensor y({out});
  for (int o = 0; o < out; ++o) {
    double acc = b[std::size_t(o)];
    const float* row = w.data() + std::size_t(o) * in;
    for (int i = 0; i < in; ++i) acc += double(row[i]) * x[std::size_t(i)];
    y[std::size_t(o)] = float(acc);
  }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  const int out = w.dim(0), in = w.dim(1);
  if (int(dy.numel()) != out || int(x.numel()) != in) throw Error(ErrorCode::ShapeMismatch, "linear backward shapes");
  LinearGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({out})};
  for (int o = 0; o < out; ++o) {
    const float d = dy[std::size_t(o)];
    g.db[std::size_t(o)] = d;
    const float* row = w.data() + std::size_t(o) * in;
    float* drow = g.dw.data() + std::size_t(o) * in;
    for (int i = 0; i < in; ++i) {
      drow[i] = d * x[std::size_t(i)];
      g.dx[std::size_t(i)] += d * row[i];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// elementwise

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > 0.0f ? dy[i] : 0.0f;
  return dx;
}

Tensor tanh_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

Tensor tanh_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) dx[i] = dy[i] * (1.0f - y[i] * y[i]);
  return dx;
}

// ---------------------------------------------------------------------------
// normalisation / similarity

Tensor l2_normalize_channels_forward(const Tensor& x) {
  if (x.rank() < 1) throw Error(ErrorCode::ShapeMismatch, "l2_normalize_channels needs a channel axis");
  const std::size_t c = std::size_t(x.dim(0)), s = x.numel() / std::max<std::size_t>(c, 1);
  Tensor y(x.shape());
  std::vector<double> norm2(s, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = x.data() + ch * s;
    for (std::size_t i = 0; i < s; ++i) norm2[i] += double(src[i]) * src[i];
  }
  std::vector<float> inv(s);
  for (std::size_t i = 0; i < s; ++i) inv[i] = float(1.0 / std::max(std::sqrt(norm2[i]), double(kNormEps)));
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = x.data() + ch * s;
    float* dst = y.data() + ch * s;
    for (std::size_t i = 0; i < s; ++i) dst[i] = src[i] * inv[i];
  }
  return y;
}

Tensor l2_normalize_channels_backward(const Tensor& x, const Tensor& y, const Tensor& dy) {
  const std::size_t c = std::size_t(x.dim(0)), s = x.numel() / std::max<std::size_t>(c, 1);
  Tensor dx(x.shape());
  std::vector<double> norm2(s, 0.0), ydy(s, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* xs = x.data() + ch * s;
    const float* ys = y.data() + ch * s;
    const float* ds = dy.data() + ch * s;
    for (std::size_t i = 0; i < s; ++i) {
      norm2[i] += double(xs[i]) * xs[i];
      ydy[i] += double(ys[i]) * ds[i];
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* ys = y.data() + ch * s;
    const float* ds = dy.data() + ch * s;
    float* out = dx.data() + ch * s;
    for (std::size_t i = 0; i < s; ++i) {
      const double n = std::sqrt(norm2[i]);
      if (n > double(kNormEps)) {
        out[i] = float((ds[i] - ys[i] * ydy[i]) / n);
      } else {
        out[i] = float(ds[i] / double(kNormEps));
      }
    }
  }
  return dx;
}

Tensor softmax_spatial_forward(const Tensor& x) {
  if (x.numel() == 0) throw Error(ErrorCode::ShapeMismatch, "softmax over an empty map");
  const float mx = *std::max_element(x.values().begin(), x.values().end());
  std::vector<double> e(x.numel());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    e[i] = std::exp(double(x[i]) - double(mx));
    sum += e[i];
  }
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = float(e[i] / sum);
  return y;
}

Tensor softmax_spatial_backward(const Tensor& y, const Tensor& dy) {
  double dot = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) dot += double(y[i]) * dy[i];
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) dx[i] = float(double(y[i]) * (double(dy[i]) - dot));
  return dx;
}

Tensor dot_map_forward(const Tensor& v, const Tensor& f) {
  if (f.rank() < 2 || std::size_t(f.dim(0)) != v.numel()) {
    throw Error(ErrorCode::ShapeMismatch, "dot_map: kernel length must equal feature channels");
  }
  std::vector<int> out_shape(f.shape().begin() + 1, f.shape().end());
  Tensor y(out_shape);
  const std::size_t c = v.numel(), s = y.numel();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float k = v[ch];
    const float* src = f.data() + ch * s;
    for (std::size_t i = 0; i < s; ++i) y[i] += k * src[i];
  }
  return y;
}

DotMapGrads dot_map_backward(const Tensor& v, const Tensor& f, const Tensor& dy) {
  const std::size_t c = v.numel(), s = dy.numel();
  DotMapGrads g{Tensor(v.shape()), Tensor(f.shape())};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = f.data() + ch * s;
    float* df = g.df.data() + ch * s;
    double acc = 0.0;
    const float k = v[ch];
    for (std::size_t i = 0; i < s; ++i) {
      acc += double(dy[i]) * src[i];
      df[i] = k * dy[i];
    }
    g.dv[ch] = float(acc);
  }
  return g;
}

Tensor gather_channels_forward(const Tensor& f, Voxel at) {
  require_spatial4(f, "gather_channels");
  const Shape3 sp{f.dim(1), f.dim(2), f.dim(3)};
  if (!sp.contains(at)) throw Error(ErrorCode::PointOutsidePatch, "gather point outside feature map");
  Tensor v({f.dim(0)});
  for (int ch = 0; ch < f.dim(0); ++ch) v[std::size_t(ch)] = f[std::size_t(ch) * sp.count() + sp.offset(at)];
  return v;
}

Tensor gather_channels_backward(const std::vector<int>& f_shape, Voxel at, const Tensor& dy) {
  Tensor df(f_shape);
  const Shape3 sp{f_shape[1], f_shape[2], f_shape[3]};
  for (int ch = 0; ch < f_shape[0]; ++ch) df[std::size_t(ch) * sp.count() + sp.offset(at)] = dy[std::size_t(ch)];
  return df;
}

double bce_onehot_forward(const Tensor& s, std::size_t hot) {
  if (hot >= s.numel()) throw Error(ErrorCode::PointOutsidePatch, "one-hot index outside the map");
  double loss = 0.0;
  for (std::size_t i = 0; i < s.numel(); ++i) {
    const double p = std::clamp(double(s[i]), kProbClamp, 1.0 - kProbClamp);
    loss -= (i == hot) ? std::log(p) : std::log1p(-p);
  }
  return loss;
}

Tensor bce_onehot_backward(const Tensor& s, std::size_t hot, double dloss) {
  Tensor ds(s.shape());
  for (std::size_t i = 0; i < s.numel(); ++i) {
    const double p = double(s[i]);
    if (p < kProbClamp || p > 1.0 - kProbClamp) continue;
    ds[i] = float(dloss * ((i == hot) ? -1.0 / p : 1.0 / (1.0 - p)));
  }
  return ds;
}

}  // namespace anatomap::nn::kernels
