#include "cubecast/tensor.hpp"

#include <Eigen/Core>
#include <cmath>
#include <sstream>

namespace cubecast {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
void ensure_finite(const char* op, const TensorT<T>& t) {
  Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> m(t.data(), t.size());
  if (!m.allFinite())
    throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  if (!same_shape(a, b))
    throw std::invalid_argument("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template void ensure_finite<float>(const char*, const TensorT<float>&);
template void ensure_finite<double>(const char*, const TensorT<double>&);
template double max_abs_diff<float>(const TensorT<float>&, const TensorT<float>&);
template double max_abs_diff<double>(const TensorT<double>&, const TensorT<double>&);

}  // namespace cubecast
