#pragma once
#include <functional>
#include <vector>

#include "cubecast/tensor.hpp"

namespace cubecast {

// Reverse-mode tape. Nodes are appended in execution order, so creation order
// is a topological order and backward is a single reverse sweep. One logical
// thread owns a tape; parallel training gives each sample its own tape.
template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const TensorT<T>&)>;

  int leaf(TensorT<T> value) { return record(std::move(value), BackFn{}); }

  int record(TensorT<T> value, BackFn back) {
    values_.push_back(std::move(value));
    backs_.push_back(std::move(back));
    return static_cast<int>(values_.size()) - 1;
  }

  // Adds g to the gradient slot of `node` (allocating zeros on first use).
  void accumulate(int node, const TensorT<T>& g);

  // Seeds d(loss)/d(loss) = 1 (loss must hold a single element) and sweeps the
  // recorded nodes in reverse creation order.
  void backward(int loss_node);

  const TensorT<T>* grad(int node) const {
    if (node < 0 || node >= static_cast<int>(grads_.size()) || !grads_[node].defined())
      return nullptr;
    return &grads_[node];
  }

  const TensorT<T>& value(int node) const { return values_[static_cast<size_t>(node)]; }
  int size() const { return static_cast<int>(values_.size()); }

  void clear() {
    values_.clear();
    backs_.clear();
    grads_.clear();
  }

 private:
  std::vector<TensorT<T>> values_;
  std::vector<BackFn> backs_;
  std::vector<TensorT<T>> grads_;
};

// Differentiable handle: a value plus (optionally) the tape node it came from.
// Untracked vars (tape == nullptr) flow through ops without recording.
template <typename T>
struct Var {
  TensorT<T> val;
  Tape<T>* tape = nullptr;
  int node = -1;

  bool tracked() const { return tape != nullptr && node >= 0; }
  const Shape& shape() const { return val.shape(); }
};

template <typename T>
Var<T> make_leaf(Tape<T>& tape, TensorT<T> v) {
  Var<T> r;
  r.val = v;
  r.tape = &tape;
  r.node = tape.leaf(std::move(v));
  return r;
}

template <typename T>
Var<T> make_const(TensorT<T> v) {
  Var<T> r;
  r.val = std::move(v);
  return r;
}

// Central-difference gradient check for a scalar-valued differentiable
// function of one tensor; returns the maximum over coordinates of
// |analytic - central| / max(|analytic|, |central|, 1e-8).
template <typename T>
double grad_check(const std::function<Var<T>(Tape<T>&, const Var<T>&)>& f,
                  const TensorT<T>& x0, T h);

}  // namespace cubecast
