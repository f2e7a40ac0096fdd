#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "anatomap/autodiff.hpp"
#include "anatomap/tensor.hpp"

namespace anatomap::testing {

inline nn::Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  nn::Tensor t(std::move(shape));
  std::uniform_real_distribution<float> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline int rand_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

using GraphFn = std::function<nn::Var(const std::vector<nn::Var>&)>;

struct GradCheck {
  double rel_error = 0.0;
  std::size_t checked = 0;
};

// Scalar probe L = sum_i w_i y_i with fixed random w, accumulated in double.
inline double probe(const nn::Tensor& y, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += double(y[i]) * w[i];
  return s;
}

/// Central finite differences against reverse mode for every input of `f`.
/// The error is ||g_fd - g_ad|| / max(||g_fd||, ||g_ad||) over the probed
/// elements of all inputs (at most max_elems per input, chosen at random).
inline GradCheck gradcheck(const GraphFn& f, std::vector<nn::Tensor> inputs, std::uint64_t seed, double h = 1e-3,
                           std::size_t max_elems = 64) {
  std::mt19937_64 rng(seed);
  std::vector<nn::Var> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  const nn::Var y = f(vars);
  std::vector<double> w(y.value().numel());
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : w) v = y.value().numel() == 1 ? 1.0 : u(rng);
  nn::Tensor wt(y.value().shape());
  for (std::size_t i = 0; i < w.size(); ++i) wt[i] = float(w[i]);
  nn::backward(nn::sum(nn::mul_const(y, wt)));

  GradCheck out;
  double diff2 = 0.0, fd2 = 0.0, ad2 = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const nn::Tensor ad = vars[k].grad();
    std::vector<std::size_t> idx(inputs[k].numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > max_elems) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_elems);
    }
    for (std::size_t i : idx) {
      auto eval = [&](double delta) {
        std::vector<nn::Var> pv;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          nn::Tensor t = inputs[j];
          if (j == k) t[i] = float(double(t[i]) + delta);
          pv.emplace_back(std::move(t), false);
        }
        return probe(f(pv).value(), w);
      };
      // The perturbation actually representable in float32.
      const double up = double(float(double(inputs[k][i]) + h)) - double(inputs[k][i]);
      const double dn = double(inputs[k][i]) - double(float(double(inputs[k][i]) - h));
      const double fd = (eval(h) - eval(-h)) / (up + dn);
      diff2 += (fd - ad[i]) * (fd - ad[i]);
      fd2 += fd * fd;
      ad2 += double(ad[i]) * ad[i];
      ++out.checked;
    }
  }
  out.rel_error = std::sqrt(diff2) / std::max({std::sqrt(fd2), std::sqrt(ad2), 1e-12});
  return out;
}

}  // namespace anatomap::testing
