#include "cubecast/flops.hpp"

namespace cubecast::flops {

namespace {
thread_local Counters tl_counters;
thread_local bool tl_enabled = false;
}  // namespace

Counters& counters() { return tl_counters; }
bool enabled() { return tl_enabled; }
void set_enabled(bool on) { tl_enabled = on; }

Scoped::Scoped() : saved_(tl_counters), was_enabled_(tl_enabled) {
  tl_counters = Counters{};
  tl_enabled = true;
}

Scoped::~Scoped() {
  tl_counters = saved_;
  tl_enabled = was_enabled_;
}

Counters Scoped::snapshot() const { return tl_counters; }

}  // namespace cubecast::flops
