#pragma once
#include <cstdint>

namespace cubecast::flops {

// Instrumentation counters for the cost-model exactness checks. Kernels bump
// these when counting is enabled; the analytic cost model must reproduce the
// numbers to the integer. Thread-local so parallel workers do not race.
struct Counters {
  uint64_t macs = 0;           // multiply-accumulates in matmul-shaped kernels
  uint64_t softmax_flops = 0;  // softmax counted at 5 flops per element
};

Counters& counters();
bool enabled();
void set_enabled(bool on);

inline void add_macs(uint64_t n) {
  if (enabled()) counters().macs += n;
}
inline void add_softmax(uint64_t elems) {
  if (enabled()) counters().softmax_flops += 5 * elems;
}

// Enables counting for a scope, starting from zero; restores on destruction.
class Scoped {
 public:
  Scoped();
  ~Scoped();
  Counters snapshot() const;

 private:
  Counters saved_;
  bool was_enabled_;
};

}  // namespace cubecast::flops
