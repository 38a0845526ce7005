#pragma once
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cubecast/cuboid.hpp"
#include "cubecast/rng.hpp"
#include "cubecast/tape.hpp"
#include "cubecast/tensor.hpp"

namespace cubecast {

// Ordered, named parameter registry. Entries share buffers with any structs
// built over them, so in-place optimizer updates are visible everywhere.
template <typename T>
class ParamStore {
 public:
  TensorT<T>& add(const std::string& name, TensorT<T> init);
  TensorT<T>& at(const std::string& name);
  const TensorT<T>& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  int64_t param_count() const;
  size_t size() const { return items_.size(); }
  const std::pair<std::string, TensorT<T>>& item(size_t i) const { return items_[i]; }

 private:
  std::vector<std::pair<std::string, TensorT<T>>> items_;
  std::unordered_map<std::string, size_t> index_;
};

// Binds parameters onto a tape as leaves, one node per underlying buffer, so
// a parameter used in several places accumulates one gradient.
template <typename T>
class Binder {
 public:
  explicit Binder(Tape<T>* tape) : tape_(tape) {}
  Var<T> operator()(const TensorT<T>& p);
  // Node id of a bound parameter, or -1 if it never appeared this pass.
  int node_of(const TensorT<T>& p) const;
  Tape<T>* tape() const { return tape_; }

 private:
  Tape<T>* tape_;
  std::unordered_map<const void*, int> cache_;
};

template <typename T>
struct LnParams {
  TensorT<T> gamma, beta;
};
template <typename T>
struct LinParams {
  TensorT<T> w, b;
};
template <typename T>
struct AttnProj {
  LinParams<T> q, k, v, o;
};
template <typename T>
struct FfnParams {
  LnParams<T> ln;
  LinParams<T> lin1, lin2;
};

// One decomposition stage: pre-attention LN, shared Q/K/V/O projections, and
// a residual FFN sub-block, all tied to one cuboid spec.
template <typename T>
struct StageParams {
  CuboidSpec spec;
  LnParams<T> ln_x;
  AttnProj<T> proj;
  FfnParams<T> ffn;
};

// Per-block global-path parameters, shared by all stages of the block: LN for
// the global vectors, the update-attention projections (query/output plus the
// global-side key/value), and the global FFN sub-block.
template <typename T>
struct GlobalParams {
  LnParams<T> ln_g;
  AttnProj<T> proj;
  FfnParams<T> ffn;
};

template <typename T>
struct SelfBlockParams {
  int64_t channels = 0;
  int heads = 4;
  int64_t pglobal = 0;  // number of global vectors; 0 disables the path
  std::vector<StageParams<T>> stages;
  std::optional<GlobalParams<T>> global;
};

// Decoder block: the self stages of a pattern followed by one cross stage
// whose keys/values come from encoder memory (used as-is, no extra LN).
template <typename T>
struct CrossBlockParams {
  int64_t channels = 0;
  int heads = 4;
  std::vector<StageParams<T>> self_stages;
  StageParams<T> cross;  // cross.spec applies per side, sizes clamped to extents
};

template <typename T>
LnParams<T> make_ln(ParamStore<T>& ps, const std::string& prefix, int64_t c);
template <typename T>
LinParams<T> make_lin(ParamStore<T>& ps, const std::string& prefix, int64_t cin, int64_t cout,
                      Rng& rng);
template <typename T>
FfnParams<T> make_ffn(ParamStore<T>& ps, const std::string& prefix, int64_t c, Rng& rng);
template <typename T>
StageParams<T> make_stage(ParamStore<T>& ps, const std::string& prefix, int64_t c,
                          const CuboidSpec& spec, Rng& rng);
template <typename T>
SelfBlockParams<T> make_self_block(ParamStore<T>& ps, const std::string& prefix, int64_t c,
                                   int heads, const std::vector<CuboidSpec>& pattern,
                                   int64_t pglobal, Rng& rng);
template <typename T>
CrossBlockParams<T> make_cross_block(ParamStore<T>& ps, const std::string& prefix, int64_t c,
                                     int heads, const std::vector<CuboidSpec>& pattern,
                                     const CuboidSpec& cross_spec, Rng& rng);

// Tracked state threaded through a block: the token tensor [T,H,W,C] and the
// global vectors [P,C] (g is undefined when the global path is off).
template <typename T>
struct XG {
  Var<T> x;
  Var<T> g;
};

template <typename T>
Var<T> ln_forward(Binder<T>& bind, const LnParams<T>& p, Var<T> x);
template <typename T>
Var<T> lin_forward(Binder<T>& bind, const LinParams<T>& p, Var<T> x);
template <typename T>
Var<T> ffn_forward(Binder<T>& bind, const FfnParams<T>& p, Var<T> x);

// One stage of a self block. Reads the normalized old x and old g, runs
// cuboid attention with the global vectors appended to every cuboid's
// keys/values, then (when enabled) the global update reusing the stage's
// token key/value projections, then the FFN sub-blocks.
template <typename T>
XG<T> self_stage_forward(Binder<T>& bind, const StageParams<T>& sp, const GlobalParams<T>* gp,
                         int heads, XG<T> in);
template <typename T>
XG<T> self_block_forward(Binder<T>& bind, const SelfBlockParams<T>& bp, XG<T> in);
// Cross stage only: queries from xq [K,H,W,C], keys/values from mem [T,H,W,C].
template <typename T>
Var<T> cross_stage_forward(Binder<T>& bind, const StageParams<T>& sp, int heads, Var<T> xq,
                           Var<T> mem);
template <typename T>
Var<T> cross_block_forward(Binder<T>& bind, const CrossBlockParams<T>& bp, Var<T> xq,
                           Var<T> mem);

}  // namespace cubecast
