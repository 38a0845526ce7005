#include "cubecast/tape.hpp"

#include <Eigen/Core>

namespace cubecast {

template <typename T>
void Tape<T>::accumulate(int node, const TensorT<T>& g) {
  if (node < 0 || node >= size()) throw std::logic_error("tape accumulate on unknown node");
  const TensorT<T>& v = values_[static_cast<size_t>(node)];
  if (!same_shape(v, g))
    throw std::logic_error("gradient shape " + shape_str(g.shape()) + " does not match value " +
                           shape_str(v.shape()));
  if (grads_.size() < values_.size()) grads_.resize(values_.size());
  TensorT<T>& slot = grads_[static_cast<size_t>(node)];
  if (!slot.defined()) {
    slot = g.clone();
    return;
  }
  Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> dst(slot.data(), slot.size());
  Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> src(g.data(), g.size());
  dst += src;
}

template <typename T>
void Tape<T>::backward(int loss_node) {
  if (loss_node < 0 || loss_node >= size()) throw std::logic_error("backward on unknown node");
  if (values_[static_cast<size_t>(loss_node)].size() != 1)
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_str(values_[static_cast<size_t>(loss_node)].shape()));
  grads_.assign(values_.size(), TensorT<T>{});
  grads_[static_cast<size_t>(loss_node)] =
      TensorT<T>::full(values_[static_cast<size_t>(loss_node)].shape(), T(1));
  for (int id = loss_node; id >= 0; --id) {
    if (!grads_[static_cast<size_t>(id)].defined()) continue;
    if (backs_[static_cast<size_t>(id)]) backs_[static_cast<size_t>(id)](*this, grads_[static_cast<size_t>(id)]);
  }
}

template <typename T>
double grad_check(const std::function<Var<T>(Tape<T>&, const Var<T>&)>& f, const TensorT<T>& x0,
                  T h) {
  Tape<T> tape;
  Var<T> x = make_leaf(tape, x0.clone());
  Var<T> loss = f(tape, x);
  if (!loss.tracked()) throw std::logic_error("grad_check function produced an untracked output");
  tape.backward(loss.node);
  const TensorT<T>* ga = tape.grad(x.node);
  TensorT<T> analytic = ga ? ga->clone() : TensorT<T>(x0.shape());

  auto value_at = [&f](const TensorT<T>& xv) {
    Tape<T> t;
    Var<T> xi = make_leaf(t, xv.clone());
    return static_cast<double>(f(t, xi).val[0]);
  };

  double worst = 0;
  TensorT<T> xp = x0.clone();
  for (int64_t i = 0; i < x0.size(); ++i) {
    T orig = xp[i];
    xp[i] = orig + h;
    double fp = value_at(xp);
    xp[i] = orig - h;
    double fm = value_at(xp);
    xp[i] = orig;
    double central = (fp - fm) / (2.0 * static_cast<double>(h));
    double a = static_cast<double>(analytic[i]);
    double denom = std::max({std::fabs(a), std::fabs(central), 1e-8});
    worst = std::max(worst, std::fabs(a - central) / denom);
  }
  return worst;
}

template class Tape<float>;
template class Tape<double>;
template double grad_check<float>(const std::function<Var<float>(Tape<float>&, const Var<float>&)>&,
                                  const TensorT<float>&, float);
template double grad_check<double>(
    const std::function<Var<double>(Tape<double>&, const Var<double>&)>&, const TensorT<double>&,
    double);

}  // namespace cubecast
