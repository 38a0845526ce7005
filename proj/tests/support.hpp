#pragma once
// Loop-based reference implementations used as oracles. Deliberately naive and
// independent of the vectorized kernels in core.
#include <cmath>
#include <vector>

#include "cubecast/rng.hpp"
#include "cubecast/tensor.hpp"

namespace testsup {

using cubecast::Rng;
using cubecast::Shape;
using Tensor = cubecast::TensorT<double>;

inline Tensor rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor c({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0;
      for (int64_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

inline Tensor naive_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int64_t rows = x.size() / x.shape().back();
  const int64_t k = x.shape().back(), n = w.shape()[1];
  Tensor y = naive_matmul(x.reshaped({rows, k}), w);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < n; ++j) y[i * n + j] += b[j];
  Shape s = x.shape();
  s.back() = n;
  return y.reshaped(std::move(s));
}

inline Tensor naive_layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                               double eps = 1e-5) {
  const int64_t c = x.shape().back();
  const int64_t rows = x.size() / c;
  Tensor y(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    double mean = 0, var = 0;
    for (int64_t j = 0; j < c; ++j) mean += x[r * c + j];
    mean /= static_cast<double>(c);
    for (int64_t j = 0; j < c; ++j) {
      const double d = x[r * c + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < c; ++j)
      y[r * c + j] = (x[r * c + j] - mean) * inv * gamma[j] + beta[j];
  }
  return y;
}

inline double gelu_tanh_scalar(double x) {
  const double c0 = std::sqrt(2.0 / M_PI);
  return 0.5 * x * (1.0 + std::tanh(c0 * (x + 0.044715 * x * x * x)));
}

inline Tensor naive_gelu(const Tensor& x) {
  Tensor y(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) y[i] = gelu_tanh_scalar(x[i]);
  return y;
}

// Multi-head attention over one query set. q: [nq,C]; kall/vall: [nk,C];
// kmask (optional): kmask[j] == 0 masks key column j with a -1e30 logit.
inline Tensor dense_mha(const Tensor& q, const Tensor& kall, const Tensor& vall, int heads,
                        const std::vector<char>* kmask = nullptr) {
  const int64_t nq = q.shape()[0], nk = kall.shape()[0], c = q.shape()[1];
  const int64_t hd = c / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor out({nq, c});
  std::vector<double> logits(static_cast<size_t>(nk));
  for (int h = 0; h < heads; ++h) {
    const int64_t off = h * hd;
    for (int64_t i = 0; i < nq; ++i) {
      double mx = -1e300;
      for (int64_t j = 0; j < nk; ++j) {
        double s = 0;
        for (int64_t d = 0; d < hd; ++d) s += q[i * c + off + d] * kall[j * c + off + d];
        s *= sc;
        if (kmask && !(*kmask)[static_cast<size_t>(j)]) s = -1e30;
        logits[static_cast<size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      double z = 0;
      for (int64_t j = 0; j < nk; ++j) {
        logits[static_cast<size_t>(j)] = std::exp(logits[static_cast<size_t>(j)] - mx);
        z += logits[static_cast<size_t>(j)];
      }
      for (int64_t d = 0; d < hd; ++d) {
        double acc = 0;
        for (int64_t j = 0; j < nk; ++j)
          acc += logits[static_cast<size_t>(j)] / z * vall[j * c + off + d];
        out[i * c + off + d] = acc;
      }
    }
  }
  return out;
}

inline double max_abs(const Tensor& t) {
  double m = 0;
  for (int64_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
  return m;
}

}  // namespace testsup
