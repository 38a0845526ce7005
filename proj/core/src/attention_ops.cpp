#include <Eigen/Core>
#include <cmath>

#include "cubecast/flops.hpp"
#include "cubecast/ops.hpp"
#include "op_common.hpp"

namespace cubecast {

using detail::CMatMap;
using detail::Mat;
using detail::MatMap;

namespace {

constexpr double kMaskLogit = -1e30;

template <typename T>
void gather_rows(const T* src, int64_t c, const int32_t* idx, int64_t n, T* dst) {
  for (int64_t r = 0; r < n; ++r) {
    if (idx[r] < 0) {
      for (int64_t j = 0; j < c; ++j) dst[r * c + j] = T(0);
    } else {
      const T* s = src + static_cast<int64_t>(idx[r]) * c;
      for (int64_t j = 0; j < c; ++j) dst[r * c + j] = s[j];
    }
  }
}

template <typename T>
void scatter_rows_add(const T* src, int64_t c, const int32_t* idx, int64_t n, T* dst) {
  for (int64_t r = 0; r < n; ++r) {
    if (idx[r] < 0) continue;
    T* d = dst + static_cast<int64_t>(idx[r]) * c;
    for (int64_t j = 0; j < c; ++j) d[j] += src[r * c + j];
  }
}

template <typename T>
void softmax_rows_masked(MatMap<T> s, const int32_t* key_idx, int64_t masked_cols) {
  // key_idx covers the first masked_cols columns; idx < 0 marks a padded key.
  for (int64_t r = 0; r < s.rows(); ++r) {
    for (int64_t j = 0; j < masked_cols; ++j)
      if (key_idx[j] < 0) s(r, j) = static_cast<T>(kMaskLogit);
    T mx = s.row(r).maxCoeff();
    s.row(r).array() = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}

// Shared softmax backward: ds = p .* (dp - rowsum(dp .* p))
template <typename T>
void softmax_backward_rows(const CMatMap<T>& p, Mat<T>& dp) {
  for (int64_t r = 0; r < p.rows(); ++r) {
    T dot = (dp.row(r).array() * p.row(r).array()).sum();
    dp.row(r).array() = p.row(r).array() * (dp.row(r).array() - dot);
  }
}

template <typename T>
void check_tokens(const char* op, const Var<T>& v, int64_t rows, int64_t c) {
  if (v.val.ndim() != 2 || v.val.dim(0) != rows || v.val.dim(1) != c)
    throw std::invalid_argument(std::string(op) + ": expected [" + std::to_string(rows) + "," +
                                std::to_string(c) + "], got " + shape_str(v.shape()));
}

}  // namespace

template <typename T>
Var<T> cuboid_mha(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& kg,
                  const Var<T>& vg, std::shared_ptr<const CuboidGeometry> geom, int heads) {
  if (!geom) throw std::invalid_argument("cuboid_mha: null geometry");
  int64_t n = geom->valid, c = q.val.ndim() == 2 ? q.val.dim(1) : -1;
  check_tokens("cuboid_mha q", q, n, c);
  check_tokens("cuboid_mha k", k, n, c);
  check_tokens("cuboid_mha v", v, n, c);
  int64_t p = 0;
  bool with_global = kg.val.defined();
  if (with_global != vg.val.defined())
    throw std::invalid_argument("cuboid_mha: kg and vg must be both present or both absent");
  if (with_global) {
    if (kg.val.ndim() != 2 || kg.val.dim(1) != c || !same_shape(kg.val, vg.val))
      throw std::invalid_argument("cuboid_mha: bad global key/value shapes");
    p = kg.val.dim(0);
  }
  if (c % heads != 0)
    throw std::invalid_argument("cuboid_mha: channels " + std::to_string(c) +
                                " not divisible by heads " + std::to_string(heads));
  int64_t hd = c / heads, L = geom->cublen, ncub = geom->ncub, cols = L + p;
  T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  TensorT<T> out(Shape{n, c});
  TensorT<T> probs(Shape{ncub, heads, L, cols});
  Mat<T> qc(L, c), kall(cols, c), vall(cols, c);
  if (with_global) {
    kall.bottomRows(p) = CMatMap<T>(kg.val.data(), p, c);
    vall.bottomRows(p) = CMatMap<T>(vg.val.data(), p, c);
  }
  for (int64_t cub = 0; cub < ncub; ++cub) {
    const int32_t* idx = geom->gather.data() + cub * L;
    gather_rows(q.val.data(), c, idx, L, qc.data());
    gather_rows(k.val.data(), c, idx, L, kall.data());
    gather_rows(v.val.data(), c, idx, L, vall.data());
    for (int h = 0; h < heads; ++h) {
      MatMap<T> s(probs.data() + ((cub * heads + h) * L) * cols, L, cols);
      s.noalias() = qc.middleCols(h * hd, hd) * kall.middleCols(h * hd, hd).transpose() * sc;
      softmax_rows_masked(s, idx, L);
      qc.middleCols(h * hd, hd).noalias() = s * vall.middleCols(h * hd, hd);
    }
    scatter_rows_add(qc.data(), c, idx, L, out.data());
  }
  flops::add_macs(2ull * ncub * heads * L * cols * hd);
  flops::add_softmax(static_cast<uint64_t>(ncub) * heads * L * cols);

  Tape<T>* tp = detail::joint_tape<T>({&q, &k, &v, &kg, &vg});
  int qn = detail::node_or(q), kn = detail::node_or(k), vn = detail::node_or(v), kgn = detail::node_or(kg),
      vgn = detail::node_or(vg);
  TensorT<T> qv = q.val, kv = k.val, vv = v.val;
  TensorT<T> kgv = with_global ? kg.val : TensorT<T>{}, vgv = with_global ? vg.val : TensorT<T>{};
  return detail::finish<T>(
      "cuboid_mha", std::move(out), tp,
      [=, g2 = geom](Tape<T>& t, const TensorT<T>& gout) {
        TensorT<T> dq(Shape{n, c}), dk(Shape{n, c}), dv(Shape{n, c});
        TensorT<T> dkg, dvg;
        if (with_global) {
          dkg = TensorT<T>(Shape{p, c});
          dvg = TensorT<T>(Shape{p, c});
        }
        Mat<T> qc(L, c), kall(cols, c), vall(cols, c), go(L, c);
        Mat<T> dqc(L, c), dkall(cols, c), dvall(cols, c);
        Mat<T> dp(L, cols);
        if (with_global) {
          kall.bottomRows(p) = CMatMap<T>(kgv.data(), p, c);
          vall.bottomRows(p) = CMatMap<T>(vgv.data(), p, c);
        }
        for (int64_t cub = 0; cub < ncub; ++cub) {
          const int32_t* idx = g2->gather.data() + cub * L;
          gather_rows(qv.data(), c, idx, L, qc.data());
          gather_rows(kv.data(), c, idx, L, kall.data());
          gather_rows(vv.data(), c, idx, L, vall.data());
          gather_rows(gout.data(), c, idx, L, go.data());
          for (int h = 0; h < heads; ++h) {
            CMatMap<T> pm(probs.data() + ((cub * heads + h) * L) * cols, L, cols);
            dp.noalias() = go.middleCols(h * hd, hd) * vall.middleCols(h * hd, hd).transpose();
            dvall.middleCols(h * hd, hd).noalias() = pm.transpose() * go.middleCols(h * hd, hd);
            softmax_backward_rows(pm, dp);
            dqc.middleCols(h * hd, hd).noalias() = dp * kall.middleCols(h * hd, hd) * sc;
            dkall.middleCols(h * hd, hd).noalias() = dp.transpose() * qc.middleCols(h * hd, hd) * sc;
          }
          if (qn >= 0) scatter_rows_add(dqc.data(), c, idx, L, dq.data());
          if (kn >= 0) scatter_rows_add(dkall.data(), c, idx, L, dk.data());
          if (vn >= 0) scatter_rows_add(dvall.data(), c, idx, L, dv.data());
          if (with_global) {
            if (kgn >= 0) MatMap<T>(dkg.data(), p, c) += dkall.bottomRows(p);
            if (vgn >= 0) MatMap<T>(dvg.data(), p, c) += dvall.bottomRows(p);
          }
        }
        flops::add_macs(4ull * ncub * heads * L * cols * hd);
        if (qn >= 0) t.accumulate(qn, dq);
        if (kn >= 0) t.accumulate(kn, dk);
        if (vn >= 0) t.accumulate(vn, dv);
        if (kgn >= 0) t.accumulate(kgn, dkg);
        if (vgn >= 0) t.accumulate(vgn, dvg);
      });
}

template <typename T>
Var<T> global_mha(const Var<T>& qg, const Var<T>& kg, const Var<T>& vg, const Var<T>& kx,
                  const Var<T>& vx, int heads) {
  if (qg.val.ndim() != 2) throw std::invalid_argument("global_mha: qg must be [P,C]");
  int64_t p = qg.val.dim(0), c = qg.val.dim(1);
  check_tokens("global_mha kg", kg, p, c);
  check_tokens("global_mha vg", vg, p, c);
  if (kx.val.ndim() != 2 || kx.val.dim(1) != c || !same_shape(kx.val, vx.val))
    throw std::invalid_argument("global_mha: bad token key/value shapes");
  int64_t n = kx.val.dim(0);
  if (c % heads != 0) throw std::invalid_argument("global_mha: channels not divisible by heads");
  int64_t hd = c / heads, cols = p + n;
  T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  TensorT<T> out(Shape{p, c});
  TensorT<T> probs(Shape{static_cast<int64_t>(heads), p, cols});
  Mat<T> kall(cols, c), vall(cols, c);
  kall.topRows(p) = CMatMap<T>(kg.val.data(), p, c);
  kall.bottomRows(n) = CMatMap<T>(kx.val.data(), n, c);
  vall.topRows(p) = CMatMap<T>(vg.val.data(), p, c);
  vall.bottomRows(n) = CMatMap<T>(vx.val.data(), n, c);
  CMatMap<T> qm(qg.val.data(), p, c);
  MatMap<T> om(out.data(), p, c);
  for (int h = 0; h < heads; ++h) {
    MatMap<T> s(probs.data() + h * p * cols, p, cols);
    s.noalias() = qm.middleCols(h * hd, hd) * kall.middleCols(h * hd, hd).transpose() * sc;
    for (int64_t r = 0; r < p; ++r) {
      T mx = s.row(r).maxCoeff();
      s.row(r).array() = (s.row(r).array() - mx).exp();
      s.row(r) /= s.row(r).sum();
    }
    om.middleCols(h * hd, hd).noalias() = s * vall.middleCols(h * hd, hd);
  }
  flops::add_macs(2ull * heads * p * cols * hd);
  flops::add_softmax(static_cast<uint64_t>(heads) * p * cols);

  Tape<T>* tp = detail::joint_tape<T>({&qg, &kg, &vg, &kx, &vx});
  int qn = detail::node_or(qg), kgn = detail::node_or(kg), vgn = detail::node_or(vg),
      kxn = detail::node_or(kx), vxn = detail::node_or(vx);
  TensorT<T> qv = qg.val, kgv = kg.val, vgv = vg.val, kxv = kx.val, vxv = vx.val;
  return detail::finish<T>(
      "global_mha", std::move(out), tp, [=](Tape<T>& t, const TensorT<T>& gout) {
        Mat<T> kall(cols, c), vall(cols, c);
        kall.topRows(p) = CMatMap<T>(kgv.data(), p, c);
        kall.bottomRows(n) = CMatMap<T>(kxv.data(), n, c);
        vall.topRows(p) = CMatMap<T>(vgv.data(), p, c);
        vall.bottomRows(n) = CMatMap<T>(vxv.data(), n, c);
        CMatMap<T> qm(qv.data(), p, c);
        CMatMap<T> gm(gout.data(), p, c);
        Mat<T> dq(p, c), dkall(cols, c), dvall(cols, c), dp(p, cols);
        dq.setZero();
        dkall.setZero();
        dvall.setZero();
        for (int h = 0; h < heads; ++h) {
          CMatMap<T> pm(probs.data() + h * p * cols, p, cols);
          dp.noalias() = gm.middleCols(h * hd, hd) * vall.middleCols(h * hd, hd).transpose();
          dvall.middleCols(h * hd, hd).noalias() = pm.transpose() * gm.middleCols(h * hd, hd);
          softmax_backward_rows(pm, dp);
          dq.middleCols(h * hd, hd).noalias() = dp * kall.middleCols(h * hd, hd) * sc;
          dkall.middleCols(h * hd, hd).noalias() = dp.transpose() * qm.middleCols(h * hd, hd) * sc;
        }
        flops::add_macs(4ull * heads * p * cols * hd);
        auto push = [&t](int node, const Eigen::Ref<const Mat<T>>& m, int64_t rows, int64_t cc) {
          if (node < 0) return;
          TensorT<T> g(Shape{rows, cc});
          MatMap<T>(g.data(), rows, cc) = m;
          t.accumulate(node, g);
        };
        push(qn, dq, p, c);
        push(kgn, dkall.topRows(p), p, c);
        push(kxn, dkall.bottomRows(n), n, c);
        push(vgn, dvall.topRows(p), p, c);
        push(vxn, dvall.bottomRows(n), n, c);
      });
}

template <typename T>
Var<T> cross_mha(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 std::shared_ptr<const CuboidGeometry> qgeom,
                 std::shared_ptr<const CuboidGeometry> kvgeom, int heads) {
  if (!qgeom || !kvgeom) throw std::invalid_argument("cross_mha: null geometry");
  if (qgeom->ncub != kvgeom->ncub)
    throw std::invalid_argument("cross_mha: query and memory cuboid counts differ (" +
                                std::to_string(qgeom->ncub) + " vs " +
                                std::to_string(kvgeom->ncub) + ")");
  int64_t nq = qgeom->valid, nk = kvgeom->valid;
  int64_t c = q.val.ndim() == 2 ? q.val.dim(1) : -1;
  check_tokens("cross_mha q", q, nq, c);
  check_tokens("cross_mha k", k, nk, c);
  check_tokens("cross_mha v", v, nk, c);
  if (c % heads != 0) throw std::invalid_argument("cross_mha: channels not divisible by heads");
  int64_t hd = c / heads, lq = qgeom->cublen, lk = kvgeom->cublen, ncub = qgeom->ncub;
  T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  TensorT<T> out(Shape{nq, c});
  TensorT<T> probs(Shape{ncub, heads, lq, lk});
  Mat<T> qc(lq, c), kc(lk, c), vc(lk, c);
  for (int64_t cub = 0; cub < ncub; ++cub) {
    const int32_t* qidx = qgeom->gather.data() + cub * lq;
    const int32_t* kidx = kvgeom->gather.data() + cub * lk;
    gather_rows(q.val.data(), c, qidx, lq, qc.data());
    gather_rows(k.val.data(), c, kidx, lk, kc.data());
    gather_rows(v.val.data(), c, kidx, lk, vc.data());
    for (int h = 0; h < heads; ++h) {
      MatMap<T> s(probs.data() + ((cub * heads + h) * lq) * lk, lq, lk);
      s.noalias() = qc.middleCols(h * hd, hd) * kc.middleCols(h * hd, hd).transpose() * sc;
      softmax_rows_masked(s, kidx, lk);
      qc.middleCols(h * hd, hd).noalias() = s * vc.middleCols(h * hd, hd);
    }
    scatter_rows_add(qc.data(), c, qidx, lq, out.data());
  }
  flops::add_macs(2ull * ncub * heads * lq * lk * hd);
  flops::add_softmax(static_cast<uint64_t>(ncub) * heads * lq * lk);

  Tape<T>* tp = detail::joint_tape<T>({&q, &k, &v});
  int qn = detail::node_or(q), kn = detail::node_or(k), vn = detail::node_or(v);
  TensorT<T> qv = q.val, kv = k.val, vv = v.val;
  return detail::finish<T>(
      "cross_mha", std::move(out), tp,
      [=, qg2 = qgeom, kg2 = kvgeom](Tape<T>& t, const TensorT<T>& gout) {
        TensorT<T> dq(Shape{nq, c}), dk(Shape{nk, c}), dv(Shape{nk, c});
        Mat<T> qc(lq, c), kc(lk, c), vc(lk, c), go(lq, c);
        Mat<T> dqc(lq, c), dkc(lk, c), dvc(lk, c), dp(lq, lk);
        for (int64_t cub = 0; cub < ncub; ++cub) {
          const int32_t* qidx = qg2->gather.data() + cub * lq;
          const int32_t* kidx = kg2->gather.data() + cub * lk;
          gather_rows(qv.data(), c, qidx, lq, qc.data());
          gather_rows(kv.data(), c, kidx, lk, kc.data());
          gather_rows(vv.data(), c, kidx, lk, vc.data());
          gather_rows(gout.data(), c, qidx, lq, go.data());
          for (int h = 0; h < heads; ++h) {
            CMatMap<T> pm(probs.data() + ((cub * heads + h) * lq) * lk, lq, lk);
            dp.noalias() = go.middleCols(h * hd, hd) * vc.middleCols(h * hd, hd).transpose();
            dvc.middleCols(h * hd, hd).noalias() = pm.transpose() * go.middleCols(h * hd, hd);
            softmax_backward_rows(pm, dp);
            dqc.middleCols(h * hd, hd).noalias() = dp * kc.middleCols(h * hd, hd) * sc;
            dkc.middleCols(h * hd, hd).noalias() = dp.transpose() * qc.middleCols(h * hd, hd) * sc;
          }
          if (qn >= 0) scatter_rows_add(dqc.data(), c, qidx, lq, dq.data());
          if (kn >= 0) scatter_rows_add(dkc.data(), c, kidx, lk, dk.data());
          if (vn >= 0) scatter_rows_add(dvc.data(), c, kidx, lk, dv.data());
        }
        flops::add_macs(4ull * ncub * heads * lq * lk * hd);
        if (qn >= 0) t.accumulate(qn, dq);
        if (kn >= 0) t.accumulate(kn, dk);
        if (vn >= 0) t.accumulate(vn, dv);
      });
}

#define CUBECAST_INSTANTIATE_ATTN(T)                                                         \
  template Var<T> cuboid_mha<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,  \
                                const Var<T>&, std::shared_ptr<const CuboidGeometry>, int);  \
  template Var<T> global_mha<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,  \
                                const Var<T>&, int);                                         \
  template Var<T> cross_mha<T>(const Var<T>&, const Var<T>&, const Var<T>&,                  \
                               std::shared_ptr<const CuboidGeometry>,                        \
                               std::shared_ptr<const CuboidGeometry>, int);

CUBECAST_INSTANTIATE_ATTN(float)
CUBECAST_INSTANTIATE_ATTN(double)

}  // namespace cubecast
