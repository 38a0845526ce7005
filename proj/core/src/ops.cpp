#include "cubecast/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "cubecast/flops.hpp"
#include "op_common.hpp"

namespace cubecast {

using detail::arr;
using detail::CMatMap;
using detail::finish;
using detail::joint_tape;
using detail::Mat;
using detail::mat;
using detail::MatMap;
using detail::node_or;

namespace {

int64_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!same_shape(a.val, b.val))
    throw std::invalid_argument("add shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  TensorT<T> out(a.shape());
  arr(out) = arr(a.val) + arr(b.val);
  Tape<T>* tp = joint_tape<T>({&a, &b});
  int an = node_or(a), bn = node_or(b);
  return finish<T>("add", std::move(out), tp, [an, bn](Tape<T>& t, const TensorT<T>& g) {
    if (an >= 0) t.accumulate(an, g);
    if (bn >= 0) t.accumulate(bn, g);
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  TensorT<T> out(a.shape());
  arr(out) = arr(a.val) * s;
  Tape<T>* tp = joint_tape<T>({&a});
  int an = node_or(a);
  return finish<T>("scale", std::move(out), tp, [an, s](Tape<T>& t, const TensorT<T>& g) {
    if (an < 0) return;
    TensorT<T> gs(g.shape());
    arr(gs) = arr(g) * s;
    t.accumulate(an, gs);
  });
}

template <typename T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& v) {
  int64_t c = last_dim(x.shape());
  if (v.val.ndim() != 1 || v.val.dim(0) != c)
    throw std::invalid_argument("add_rowvec expects vector [" + std::to_string(c) + "], got " +
                                shape_str(v.shape()));
  int64_t rows = x.val.size() / c;
  TensorT<T> out(x.shape());
  mat(out, rows, c) = mat(x.val, rows, c).rowwise() +
                      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(v.val.data(), c);
  Tape<T>* tp = joint_tape<T>({&x, &v});
  int xn = node_or(x), vn = node_or(v);
  Shape vshape = v.shape();
  return finish<T>("add_rowvec", std::move(out), tp,
                   [xn, vn, rows, c, vshape](Tape<T>& t, const TensorT<T>& g) {
                     if (xn >= 0) t.accumulate(xn, g);
                     if (vn >= 0) {
                       TensorT<T> gv(vshape);
                       Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gv.data(), c) =
                           mat(g, rows, c).colwise().sum();
                       t.accumulate(vn, gv);
                     }
                   });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
  TensorT<T> out = a.val.reshaped(std::move(s));
  Tape<T>* tp = joint_tape<T>({&a});
  if (!tp) return make_const(std::move(out));
  int an = node_or(a);
  Shape in_shape = a.shape();
  Var<T> r;
  r.val = out;
  r.tape = tp;
  r.node = tp->record(std::move(out), [an, in_shape](Tape<T>& t, const TensorT<T>& g) {
    if (an >= 0) t.accumulate(an, g.reshaped(in_shape));
  });
  return r;
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.val.ndim() != 2 || b.val.ndim() != 2 || a.val.dim(1) != b.val.dim(0))
    throw std::invalid_argument("matmul shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  int64_t m = a.val.dim(0), k = a.val.dim(1), n = b.val.dim(1);
  TensorT<T> out(Shape{m, n});
  mat(out, m, n).noalias() = mat(a.val, m, k) * mat(b.val, k, n);
  flops::add_macs(static_cast<uint64_t>(m) * k * n);
  Tape<T>* tp = joint_tape<T>({&a, &b});
  int an = node_or(a), bn = node_or(b);
  TensorT<T> av = a.val, bv = b.val;
  return finish<T>("matmul", std::move(out), tp,
                   [an, bn, av, bv, m, k, n](Tape<T>& t, const TensorT<T>& g) {
                     if (an >= 0) {
                       TensorT<T> da(Shape{m, k});
                       mat(da, m, k).noalias() = mat(g, m, n) * mat(bv, k, n).transpose();
                       flops::add_macs(static_cast<uint64_t>(m) * k * n);
                       t.accumulate(an, da);
                     }
                     if (bn >= 0) {
                       TensorT<T> db(Shape{k, n});
                       mat(db, k, n).noalias() = mat(av, m, k).transpose() * mat(g, m, n);
                       flops::add_macs(static_cast<uint64_t>(m) * k * n);
                       t.accumulate(bn, db);
                     }
                   });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x.val.ndim() < 1 || w.val.ndim() != 2 || last_dim(x.val.shape()) != w.val.dim(0) ||
      b.val.ndim() != 1 || b.val.dim(0) != w.val.dim(1))
    throw std::invalid_argument("linear shapes " + shape_str(x.shape()) + " x " +
                                shape_str(w.shape()) + " + " + shape_str(b.shape()));
  // leading dims are flattened into rows
  int64_t k = last_dim(x.val.shape()), n = x.val.size() / k, m = w.val.dim(1);
  Shape out_shape = x.val.shape();
  out_shape.back() = m;
  TensorT<T> out(std::move(out_shape));
  mat(out, n, m).noalias() = mat(x.val, n, k) * mat(w.val, k, m);
  mat(out, n, m).rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.val.data(), m);
  flops::add_macs(static_cast<uint64_t>(n) * k * m);
  Tape<T>* tp = joint_tape<T>({&x, &w, &b});
  int xn = node_or(x), wn = node_or(w), bn = node_or(b);
  TensorT<T> xv = x.val, wv = w.val;
  return finish<T>("linear", std::move(out), tp,
                   [xn, wn, bn, xv, wv, n, k, m](Tape<T>& t, const TensorT<T>& g) {
                     if (xn >= 0) {
                       TensorT<T> dx(xv.shape());
                       mat(dx, n, k).noalias() = mat(g, n, m) * mat(wv, k, m).transpose();
                       flops::add_macs(static_cast<uint64_t>(n) * k * m);
                       t.accumulate(xn, dx);
                     }
                     if (wn >= 0) {
                       TensorT<T> dw(Shape{k, m});
                       mat(dw, k, m).noalias() = mat(xv, n, k).transpose() * mat(g, n, m);
                       flops::add_macs(static_cast<uint64_t>(n) * k * m);
                       t.accumulate(wn, dw);
                     }
                     if (bn >= 0) {
                       TensorT<T> db(Shape{m});
                       Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db.data(), m) =
                           mat(g, n, m).colwise().sum();
                       t.accumulate(bn, db);
                     }
                   });
}

template <typename T>
Var<T> softmax(const Var<T>& x, int axis) {
  int nd = x.val.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw std::invalid_argument("softmax axis out of range for " + shape_str(x.shape()));
  int64_t len = x.val.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.val.dim(i);
  for (int i = axis + 1; i < nd; ++i) inner *= x.val.dim(i);

  TensorT<T> out(x.shape());
  const T* in = x.val.data();
  T* o = out.data();
  for (int64_t ou = 0; ou < outer; ++ou) {
    for (int64_t in_i = 0; in_i < inner; ++in_i) {
      const T* row = in + ou * len * inner + in_i;
      T* orow = o + ou * len * inner + in_i;
      T mx = row[0];
      for (int64_t j = 1; j < len; ++j) mx = std::max(mx, row[j * inner]);
      T sum = 0;
      for (int64_t j = 0; j < len; ++j) {
        T e = std::exp(row[j * inner] - mx);
        orow[j * inner] = e;
        sum += e;
      }
      T inv = T(1) / sum;
      for (int64_t j = 0; j < len; ++j) orow[j * inner] *= inv;
    }
  }
  flops::add_softmax(static_cast<uint64_t>(x.val.size()));

  Tape<T>* tp = joint_tape<T>({&x});
  int xn = node_or(x);
  TensorT<T> probs = out;
  return finish<T>("softmax", std::move(out), tp,
                   [xn, probs, outer, len, inner](Tape<T>& t, const TensorT<T>& g) {
                     if (xn < 0) return;
                     TensorT<T> dx(g.shape());
                     const T* p = probs.data();
                     const T* gv = g.data();
                     T* d = dx.data();
                     for (int64_t ou = 0; ou < outer; ++ou) {
                       for (int64_t in_i = 0; in_i < inner; ++in_i) {
                         int64_t base = ou * len * inner + in_i;
                         T dot = 0;
                         for (int64_t j = 0; j < len; ++j)
                           dot += gv[base + j * inner] * p[base + j * inner];
                         for (int64_t j = 0; j < len; ++j)
                           d[base + j * inner] =
                               p[base + j * inner] * (gv[base + j * inner] - dot);
                       }
                     }
                     t.accumulate(xn, dx);
                   });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  int64_t c = last_dim(x.shape());
  if (gamma.val.ndim() != 1 || gamma.val.dim(0) != c || beta.val.ndim() != 1 ||
      beta.val.dim(0) != c)
    throw std::invalid_argument("layer_norm affine params must be [" + std::to_string(c) + "]");
  int64_t rows = x.val.size() / c;

  TensorT<T> out(x.shape());
  TensorT<T> xhat(x.shape());
  TensorT<T> inv_std(Shape{rows});
  auto xm = mat(x.val, rows, c);
  auto om = mat(out, rows, c);
  auto hm = mat(xhat, rows, c);
  Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> gam(gamma.val.data(), c);
  Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> bet(beta.val.data(), c);
  for (int64_t r = 0; r < rows; ++r) {
    T mu = xm.row(r).mean();
    T var = (xm.row(r).array() - mu).square().sum() / static_cast<T>(c);
    T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    hm.row(r).array() = (xm.row(r).array() - mu) * is;
    om.row(r).array() = hm.row(r).array() * gam + bet;
  }

  Tape<T>* tp = joint_tape<T>({&x, &gamma, &beta});
  int xn = node_or(x), gn = node_or(gamma), bn = node_or(beta);
  TensorT<T> gv = gamma.val;
  return finish<T>(
      "layer_norm", std::move(out), tp,
      [xn, gn, bn, xhat, inv_std, gv, rows, c](Tape<T>& t, const TensorT<T>& g) {
        auto gm = mat(g, rows, c);
        auto hm2 = mat(xhat, rows, c);
        Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> gam(gv.data(), c);
        if (xn >= 0) {
          TensorT<T> dx(g.shape());
          auto dm = mat(dx, rows, c);
          for (int64_t r = 0; r < rows; ++r) {
            Eigen::Array<T, 1, Eigen::Dynamic> dh = gm.row(r).array() * gam;
            T m1 = dh.mean();
            T m2 = (dh * hm2.row(r).array()).mean();
            dm.row(r).array() = (dh - m1 - hm2.row(r).array() * m2) * inv_std[r];
          }
          t.accumulate(xn, dx);
        }
        if (gn >= 0) {
          TensorT<T> dg(Shape{c});
          Eigen::Map<Eigen::Array<T, 1, Eigen::Dynamic>> d(dg.data(), c);
          d.setZero();
          for (int64_t r = 0; r < rows; ++r) d += gm.row(r).array() * hm2.row(r).array();
          t.accumulate(gn, dg);
        }
        if (bn >= 0) {
          TensorT<T> db(Shape{c});
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db.data(), c) = gm.colwise().sum();
          t.accumulate(bn, db);
        }
      });
}

template <typename T>
Var<T> group_norm16(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  if (x.val.ndim() != 4)
    throw std::invalid_argument("group_norm16 expects [F,H,W,C], got " + shape_str(x.shape()));
  int64_t f = x.val.dim(0), h = x.val.dim(1), w = x.val.dim(2), c = x.val.dim(3);
  const int64_t kGroups = std::min<int64_t>(16, c);
  if (c % kGroups != 0)
    throw std::invalid_argument("group_norm16 needs channels divisible by 16, got " +
                                std::to_string(c));
  if (gamma.val.ndim() != 1 || gamma.val.dim(0) != c || beta.val.ndim() != 1 ||
      beta.val.dim(0) != c)
    throw std::invalid_argument("group_norm16 affine params must be [" + std::to_string(c) + "]");
  int64_t cg = c / kGroups, hw = h * w, group_n = hw * cg;

  TensorT<T> out(x.shape());
  TensorT<T> xhat(x.shape());
  TensorT<T> inv_std(Shape{f, kGroups});
  const T* xp = x.val.data();
  T* op = out.data();
  T* hp = xhat.data();
  const T* gam = gamma.val.data();
  const T* bet = beta.val.data();
  for (int64_t fr = 0; fr < f; ++fr) {
    for (int64_t g = 0; g < kGroups; ++g) {
      double sum = 0, sq = 0;
      for (int64_t s = 0; s < hw; ++s) {
        const T* cell = xp + (fr * hw + s) * c + g * cg;
        for (int64_t j = 0; j < cg; ++j) {
          double v = static_cast<double>(cell[j]);
          sum += v;
          sq += v * v;
        }
      }
      double mu = sum / group_n;
      double var = sq / group_n - mu * mu;
      if (var < 0) var = 0;
      T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      inv_std.at(fr, g) = is;
      for (int64_t s = 0; s < hw; ++s) {
        int64_t base = (fr * hw + s) * c + g * cg;
        for (int64_t j = 0; j < cg; ++j) {
          T xh = (xp[base + j] - static_cast<T>(mu)) * is;
          hp[base + j] = xh;
          op[base + j] = xh * gam[g * cg + j] + bet[g * cg + j];
        }
      }
    }
  }

  Tape<T>* tp = joint_tape<T>({&x, &gamma, &beta});
  int xn = node_or(x), gn = node_or(gamma), bn = node_or(beta);
  TensorT<T> gv = gamma.val;
  return finish<T>(
      "group_norm16", std::move(out), tp,
      [xn, gn, bn, xhat, inv_std, gv, f, hw, c, cg](Tape<T>& t, const TensorT<T>& g) {
        const T* hp = xhat.data();
        const T* gp = g.data();
        const T* gam = gv.data();
        int64_t group_n = hw * cg;
        if (xn >= 0) {
          TensorT<T> dx(g.shape());
          T* dp = dx.data();
          const int64_t groups = c / cg;
          for (int64_t fr = 0; fr < f; ++fr) {
            for (int64_t gr = 0; gr < groups; ++gr) {
              double m1 = 0, m2 = 0;
              for (int64_t s = 0; s < hw; ++s) {
                int64_t base = (fr * hw + s) * c + gr * cg;
                for (int64_t j = 0; j < cg; ++j) {
                  double dh = static_cast<double>(gp[base + j]) * gam[gr * cg + j];
                  m1 += dh;
                  m2 += dh * hp[base + j];
                }
              }
              m1 /= group_n;
              m2 /= group_n;
              T is = inv_std.at(fr, gr);
              for (int64_t s = 0; s < hw; ++s) {
                int64_t base = (fr * hw + s) * c + gr * cg;
                for (int64_t j = 0; j < cg; ++j) {
                  double dh = static_cast<double>(gp[base + j]) * gam[gr * cg + j];
                  dp[base + j] = static_cast<T>((dh - m1 - hp[base + j] * m2) * is);
                }
              }
            }
          }
          t.accumulate(xn, dx);
        }
        if (gn >= 0 || bn >= 0) {
          TensorT<T> dg(Shape{c}), db(Shape{c});
          T* dgp = dg.data();
          T* dbp = db.data();
          int64_t rows = f * hw;
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < c; ++j) {
              dgp[j] += gp[r * c + j] * hp[r * c + j];
              dbp[j] += gp[r * c + j];
            }
          }
          if (gn >= 0) t.accumulate(gn, dg);
          if (bn >= 0) t.accumulate(bn, db);
        }
      });
}

namespace {

// im2col for a 3x3 same-padding window over one [H,W,Ci] frame:
// cols[(i*W+j), (ky*3+kx)*Ci + ci]
template <typename T>
void im2col_3x3(const T* frame, int64_t h, int64_t w, int64_t ci, T* cols) {
  int64_t k = 9 * ci;
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j) {
      T* row = cols + (i * w + j) * k;
      for (int64_t ky = 0; ky < 3; ++ky) {
        int64_t si = i + ky - 1;
        for (int64_t kx = 0; kx < 3; ++kx) {
          int64_t sj = j + kx - 1;
          T* dst = row + (ky * 3 + kx) * ci;
          if (si < 0 || si >= h || sj < 0 || sj >= w) {
            for (int64_t cc = 0; cc < ci; ++cc) dst[cc] = T(0);
          } else {
            const T* src = frame + (si * w + sj) * ci;
            for (int64_t cc = 0; cc < ci; ++cc) dst[cc] = src[cc];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_3x3(const T* cols, int64_t h, int64_t w, int64_t ci, T* frame) {
  int64_t k = 9 * ci;
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j) {
      const T* row = cols + (i * w + j) * k;
      for (int64_t ky = 0; ky < 3; ++ky) {
        int64_t si = i + ky - 1;
        if (si < 0 || si >= h) continue;
        for (int64_t kx = 0; kx < 3; ++kx) {
          int64_t sj = j + kx - 1;
          if (sj < 0 || sj >= w) continue;
          T* dst = frame + (si * w + sj) * ci;
          const T* src = row + (ky * 3 + kx) * ci;
          for (int64_t cc = 0; cc < ci; ++cc) dst[cc] += src[cc];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d_3x3(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x.val.ndim() != 4)
    throw std::invalid_argument("conv2d_3x3 expects [F,H,W,Ci], got " + shape_str(x.shape()));
  int64_t f = x.val.dim(0), h = x.val.dim(1), wd = x.val.dim(2), ci = x.val.dim(3);
  if (w.val.ndim() != 4 || w.val.dim(0) != 3 || w.val.dim(1) != 3 || w.val.dim(2) != ci)
    throw std::invalid_argument("conv2d_3x3 kernel must be [3,3," + std::to_string(ci) +
                                ",Co], got " + shape_str(w.shape()));
  int64_t co = w.val.dim(3);
  if (b.val.ndim() != 1 || b.val.dim(0) != co)
    throw std::invalid_argument("conv2d_3x3 bias must be [" + std::to_string(co) + "]");

  int64_t hw = h * wd, k = 9 * ci;
  TensorT<T> out(Shape{f, h, wd, co});
  std::vector<T> cols(static_cast<size_t>(hw * k));
  auto wm = mat(w.val, k, co);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(b.val.data(), co);
  for (int64_t fr = 0; fr < f; ++fr) {
    im2col_3x3(x.val.data() + fr * hw * ci, h, wd, ci, cols.data());
    MatMap<T> om(out.data() + fr * hw * co, hw, co);
    om.noalias() = CMatMap<T>(cols.data(), hw, k) * wm;
    om.rowwise() += bm;
  }
  flops::add_macs(static_cast<uint64_t>(f) * hw * k * co);

  Tape<T>* tp = joint_tape<T>({&x, &w, &b});
  int xn = node_or(x), wn = node_or(w), bn = node_or(b);
  TensorT<T> xv = x.val, wv = w.val;
  Shape wshape = w.shape();
  return finish<T>(
      "conv2d_3x3", std::move(out), tp,
      [xn, wn, bn, xv, wv, wshape, f, h, wd, ci, co](Tape<T>& t, const TensorT<T>& g) {
        int64_t hw = h * wd, k = 9 * ci;
        std::vector<T> cols(static_cast<size_t>(hw * k));
        if (wn >= 0 || bn >= 0) {
          TensorT<T> dw(wshape);
          TensorT<T> db(Shape{co});
          auto dwm = mat(dw, k, co);
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> dbm(db.data(), co);
          for (int64_t fr = 0; fr < f; ++fr) {
            im2col_3x3(xv.data() + fr * hw * ci, h, wd, ci, cols.data());
            CMatMap<T> gm(g.data() + fr * hw * co, hw, co);
            dwm.noalias() += CMatMap<T>(cols.data(), hw, k).transpose() * gm;
            dbm += gm.colwise().sum();
          }
          flops::add_macs(static_cast<uint64_t>(f) * hw * k * co);
          if (wn >= 0) t.accumulate(wn, dw);
          if (bn >= 0) t.accumulate(bn, db);
        }
        if (xn >= 0) {
          TensorT<T> dx(xv.shape());
          auto wm = mat(wv, k, co);
          for (int64_t fr = 0; fr < f; ++fr) {
            CMatMap<T> gm(g.data() + fr * hw * co, hw, co);
            MatMap<T>(cols.data(), hw, k).noalias() = gm * wm.transpose();
            col2im_3x3(cols.data(), h, wd, ci, dx.data() + fr * hw * ci);
          }
          flops::add_macs(static_cast<uint64_t>(f) * hw * k * co);
          t.accumulate(xn, dx);
        }
      });
}

template <typename T>
Var<T> patch_merge(const Var<T>& x, int64_t p) {
  if (x.val.ndim() != 4)
    throw std::invalid_argument("patch_merge expects [F,H,W,C], got " + shape_str(x.shape()));
  int64_t f = x.val.dim(0), h = x.val.dim(1), w = x.val.dim(2), c = x.val.dim(3);
  if (p <= 0 || h % p != 0 || w % p != 0)
    throw std::invalid_argument("patch_merge: H,W " + shape_str(x.shape()) +
                                " not divisible by patch " + std::to_string(p));
  int64_t ho = h / p, wo = w / p, co = p * p * c;
  TensorT<T> out(Shape{f, ho, wo, co});
  const T* xp = x.val.data();
  T* op = out.data();
  for (int64_t fr = 0; fr < f; ++fr)
    for (int64_t i = 0; i < ho; ++i)
      for (int64_t j = 0; j < wo; ++j) {
        T* cell = op + ((fr * ho + i) * wo + j) * co;
        for (int64_t dy = 0; dy < p; ++dy)
          for (int64_t dx = 0; dx < p; ++dx) {
            const T* src = xp + ((fr * h + i * p + dy) * w + j * p + dx) * c;
            T* dst = cell + (dy * p + dx) * c;
            for (int64_t cc = 0; cc < c; ++cc) dst[cc] = src[cc];
          }
      }

  Tape<T>* tp = joint_tape<T>({&x});
  int xn = node_or(x);
  Shape in_shape = x.shape();
  return finish<T>("patch_merge", std::move(out), tp,
                   [xn, in_shape, f, h, w, c, p, ho, wo, co](Tape<T>& t, const TensorT<T>& g) {
                     if (xn < 0) return;
                     TensorT<T> dx(in_shape);
                     const T* gp = g.data();
                     T* dp = dx.data();
                     for (int64_t fr = 0; fr < f; ++fr)
                       for (int64_t i = 0; i < ho; ++i)
                         for (int64_t j = 0; j < wo; ++j) {
                           const T* cell = gp + ((fr * ho + i) * wo + j) * co;
                           for (int64_t dy = 0; dy < p; ++dy)
                             for (int64_t dxx = 0; dxx < p; ++dxx) {
                               T* dst = dp + ((fr * h + i * p + dy) * w + j * p + dxx) * c;
                               const T* src = cell + (dy * p + dxx) * c;
                               for (int64_t cc = 0; cc < c; ++cc) dst[cc] = src[cc];
                             }
                         }
                     t.accumulate(xn, dx);
                   });
}

template <typename T>
TensorT<T> patch_split(const TensorT<T>& x, int64_t p) {
  if (x.ndim() != 4) throw std::invalid_argument("patch_split expects [F,H,W,p*p*C]");
  int64_t f = x.dim(0), ho = x.dim(1), wo = x.dim(2), co = x.dim(3);
  if (co % (p * p) != 0)
    throw std::invalid_argument("patch_split: channels not divisible by p*p");
  int64_t c = co / (p * p), h = ho * p, w = wo * p;
  TensorT<T> out(Shape{f, h, w, c});
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t fr = 0; fr < f; ++fr)
    for (int64_t i = 0; i < ho; ++i)
      for (int64_t j = 0; j < wo; ++j) {
        const T* cell = xp + ((fr * ho + i) * wo + j) * co;
        for (int64_t dy = 0; dy < p; ++dy)
          for (int64_t dx = 0; dx < p; ++dx) {
            T* dst = op + ((fr * h + i * p + dy) * w + j * p + dx) * c;
            const T* src = cell + (dy * p + dx) * c;
            for (int64_t cc = 0; cc < c; ++cc) dst[cc] = src[cc];
          }
      }
  return out;
}

template <typename T>
Var<T> nearest_upsample(const Var<T>& x, int64_t ht, int64_t wt) {
  if (x.val.ndim() != 4)
    throw std::invalid_argument("nearest_upsample expects [F,H,W,C], got " + shape_str(x.shape()));
  int64_t f = x.val.dim(0), h = x.val.dim(1), w = x.val.dim(2), c = x.val.dim(3);
  if (ht < h || wt < w)
    throw std::invalid_argument("nearest_upsample target smaller than source");
  TensorT<T> out(Shape{f, ht, wt, c});
  const T* xp = x.val.data();
  T* op = out.data();
  for (int64_t fr = 0; fr < f; ++fr)
    for (int64_t i = 0; i < ht; ++i) {
      int64_t si = i * h / ht;
      for (int64_t j = 0; j < wt; ++j) {
        int64_t sj = j * w / wt;
        const T* src = xp + ((fr * h + si) * w + sj) * c;
        T* dst = op + ((fr * ht + i) * wt + j) * c;
        for (int64_t cc = 0; cc < c; ++cc) dst[cc] = src[cc];
      }
    }

  Tape<T>* tp = joint_tape<T>({&x});
  int xn = node_or(x);
  Shape in_shape = x.shape();
  return finish<T>("nearest_upsample", std::move(out), tp,
                   [xn, in_shape, f, h, w, c, ht, wt](Tape<T>& t, const TensorT<T>& g) {
                     if (xn < 0) return;
                     TensorT<T> dx(in_shape);
                     const T* gp = g.data();
                     T* dp = dx.data();
                     for (int64_t fr = 0; fr < f; ++fr)
                       for (int64_t i = 0; i < ht; ++i) {
                         int64_t si = i * h / ht;
                         for (int64_t j = 0; j < wt; ++j) {
                           int64_t sj = j * w / wt;
                           T* dst = dp + ((fr * h + si) * w + sj) * c;
                           const T* src = gp + ((fr * ht + i) * wt + j) * c;
                           for (int64_t cc = 0; cc < c; ++cc) dst[cc] += src[cc];
                         }
                       }
                     t.accumulate(xn, dx);
                   });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  const T c0 = static_cast<T>(0.7978845608028653558798921198687637369517);  // sqrt(2/pi)
  const T c1 = static_cast<T>(0.044715);
  TensorT<T> out(x.shape());
  TensorT<T> th(x.shape());
  arr(th) = (c0 * (arr(x.val) + c1 * arr(x.val).cube())).tanh();
  arr(out) = T(0.5) * arr(x.val) * (T(1) + arr(th));

  Tape<T>* tp = joint_tape<T>({&x});
  int xn = node_or(x);
  TensorT<T> xv = x.val;
  return finish<T>("gelu", std::move(out), tp,
                   [xn, xv, th, c0, c1](Tape<T>& t, const TensorT<T>& g) {
                     if (xn < 0) return;
                     TensorT<T> dx(g.shape());
                     auto xa = arr(xv);
                     auto ta = arr(th);
                     arr(dx) = arr(g) * (T(0.5) * (T(1) + ta) +
                                         T(0.5) * xa * (T(1) - ta.square()) *
                                             (c0 * (T(1) + T(3) * c1 * xa.square())));
                     t.accumulate(xn, dx);
                   });
}

template <typename T>
TensorT<T> gelu_exact(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    double v = static_cast<double>(x[i]);
    out[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v / 1.4142135623730951)));
  }
  return out;
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T alpha) {
  TensorT<T> out(x.shape());
  arr(out) = arr(x.val).max(arr(x.val) * alpha);
  Tape<T>* tp = joint_tape<T>({&x});
  int xn = node_or(x);
  TensorT<T> xv = x.val;
  return finish<T>("leaky_relu", std::move(out), tp,
                   [xn, xv, alpha](Tape<T>& t, const TensorT<T>& g) {
                     if (xn < 0) return;
                     TensorT<T> dx(g.shape());
                     for (int64_t i = 0; i < g.size(); ++i)
                       dx[i] = xv[i] > T(0) ? g[i] : alpha * g[i];
                     t.accumulate(xn, dx);
                   });
}

template <typename T>
Var<T> pos_tile(const Var<T>& et, const Var<T>& eh, const Var<T>& ew) {
  if (et.val.ndim() != 2 || eh.val.ndim() != 2 || ew.val.ndim() != 2 ||
      et.val.dim(1) != eh.val.dim(1) || eh.val.dim(1) != ew.val.dim(1))
    throw std::invalid_argument("pos_tile expects [t,C],[h,C],[w,C]");
  int64_t tt = et.val.dim(0), hh = eh.val.dim(0), ww = ew.val.dim(0), c = et.val.dim(1);
  TensorT<T> out(Shape{tt, hh, ww, c});
  T* op = out.data();
  for (int64_t a = 0; a < tt; ++a)
    for (int64_t b = 0; b < hh; ++b)
      for (int64_t d = 0; d < ww; ++d) {
        T* dst = op + ((a * hh + b) * ww + d) * c;
        const T* pt = et.val.data() + a * c;
        const T* ph = eh.val.data() + b * c;
        const T* pw = ew.val.data() + d * c;
        for (int64_t cc = 0; cc < c; ++cc) dst[cc] = pt[cc] + ph[cc] + pw[cc];
      }

  Tape<T>* tp = joint_tape<T>({&et, &eh, &ew});
  int tn = node_or(et), hn = node_or(eh), wn = node_or(ew);
  return finish<T>("pos_tile", std::move(out), tp,
                   [tn, hn, wn, tt, hh, ww, c](Tape<T>& t, const TensorT<T>& g) {
                     const T* gp = g.data();
                     if (tn >= 0) {
                       TensorT<T> d(Shape{tt, c});
                       for (int64_t a = 0; a < tt; ++a)
                         for (int64_t b = 0; b < hh; ++b)
                           for (int64_t e = 0; e < ww; ++e) {
                             const T* src = gp + ((a * hh + b) * ww + e) * c;
                             T* dst = d.data() + a * c;
                             for (int64_t cc = 0; cc < c; ++cc) dst[cc] += src[cc];
                           }
                       t.accumulate(tn, d);
                     }
                     if (hn >= 0) {
                       TensorT<T> d(Shape{hh, c});
                       for (int64_t a = 0; a < tt; ++a)
                         for (int64_t b = 0; b < hh; ++b)
                           for (int64_t e = 0; e < ww; ++e) {
                             const T* src = gp + ((a * hh + b) * ww + e) * c;
                             T* dst = d.data() + b * c;
                             for (int64_t cc = 0; cc < c; ++cc) dst[cc] += src[cc];
                           }
                       t.accumulate(hn, d);
                     }
                     if (wn >= 0) {
                       TensorT<T> d(Shape{ww, c});
                       for (int64_t a = 0; a < tt; ++a)
                         for (int64_t b = 0; b < hh; ++b)
                           for (int64_t e = 0; e < ww; ++e) {
                             const T* src = gp + ((a * hh + b) * ww + e) * c;
                             T* dst = d.data() + e * c;
                             for (int64_t cc = 0; cc < c; ++cc) dst[cc] += src[cc];
                           }
                       t.accumulate(wn, d);
                     }
                   });
}

template <typename T>
Var<T> mse_mean(const Var<T>& pred, const TensorT<T>& target) {
  if (!same_shape(pred.val, target))
    throw std::invalid_argument("mse_mean shape mismatch " + shape_str(pred.shape()) + " vs " +
                                shape_str(target.shape()));
  int64_t n = pred.val.size();
  TensorT<T> out(Shape{1});
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    double d = static_cast<double>(pred.val[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  out[0] = static_cast<T>(acc / static_cast<double>(n));

  Tape<T>* tp = joint_tape<T>({&pred});
  int pn = node_or(pred);
  TensorT<T> pv = pred.val, tv = target;
  return finish<T>("mse_mean", std::move(out), tp,
                   [pn, pv, tv, n](Tape<T>& t, const TensorT<T>& g) {
                     if (pn < 0) return;
                     TensorT<T> dp(pv.shape());
                     T s = g[0] * T(2) / static_cast<T>(n);
                     for (int64_t i = 0; i < n; ++i) dp[i] = s * (pv[i] - tv[i]);
                     t.accumulate(pn, dp);
                   });
}

#define CUBECAST_INSTANTIATE_OPS(T)                                                          \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> scale<T>(const Var<T>&, T);                                                \
  template Var<T> add_rowvec<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                          \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                    \
  template Var<T> softmax<T>(const Var<T>&, int);                                            \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);             \
  template Var<T> group_norm16<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);           \
  template Var<T> conv2d_3x3<T>(const Var<T>&, const Var<T>&, const Var<T>&);                \
  template Var<T> patch_merge<T>(const Var<T>&, int64_t);                                    \
  template TensorT<T> patch_split<T>(const TensorT<T>&, int64_t);                            \
  template Var<T> nearest_upsample<T>(const Var<T>&, int64_t, int64_t);                      \
  template Var<T> gelu<T>(const Var<T>&);                                                    \
  template TensorT<T> gelu_exact<T>(const TensorT<T>&);                                      \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                           \
  template Var<T> pos_tile<T>(const Var<T>&, const Var<T>&, const Var<T>&);                  \
  template Var<T> mse_mean<T>(const Var<T>&, const TensorT<T>&);

CUBECAST_INSTANTIATE_OPS(float)
CUBECAST_INSTANTIATE_OPS(double)

}  // namespace cubecast
