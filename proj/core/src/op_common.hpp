#pragma once
#include <Eigen/Core>
#include <initializer_list>

#include "cubecast/tape.hpp"

// Internal helpers shared by the kernel translation units.
namespace cubecast::detail {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const Mat<T>>;
template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
ArrMap<T> arr(TensorT<T>& t) {
  return ArrMap<T>(t.data(), t.size());
}
template <typename T>
CArrMap<T> arr(const TensorT<T>& t) {
  return CArrMap<T>(t.data(), t.size());
}
template <typename T>
MatMap<T> mat(TensorT<T>& t, int64_t r, int64_t c) {
  return MatMap<T>(t.data(), r, c);
}
template <typename T>
CMatMap<T> mat(const TensorT<T>& t, int64_t r, int64_t c) {
  return CMatMap<T>(t.data(), r, c);
}

template <typename T>
Tape<T>* joint_tape(std::initializer_list<const Var<T>*> vars) {
  Tape<T>* tp = nullptr;
  for (const Var<T>* v : vars) {
    if (!v->tracked()) continue;
    if (tp && tp != v->tape) throw std::logic_error("op inputs recorded on different tapes");
    tp = v->tape;
  }
  return tp;
}

template <typename T>
int node_or(const Var<T>& v) {
  return v.tracked() ? v.node : -1;
}

template <typename T>
Var<T> finish(const char* name, TensorT<T> out, Tape<T>* tp, typename Tape<T>::BackFn back) {
  ensure_finite(name, out);
  Var<T> r;
  r.val = out;
  if (tp) {
    r.tape = tp;
    r.node = tp->record(std::move(out), std::move(back));
  }
  return r;
}

}  // namespace cubecast::detail
