#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cubecast/attention.hpp"
#include "cubecast/patterns.hpp"

namespace cubecast {

// Hyperparameters of the hierarchical encoder-decoder. The input sequence
// [T,H,W,c_in] is stemmed down by `init_downsample`, runs `blocks` attention
// blocks per hierarchy with a further 2x spatial merge between hierarchies,
// and is decoded coarse-to-fine to [K,H,W,c_out].
struct ModelConfig {
  int64_t t_in = 10;   // T, input frames
  int64_t t_out = 10;  // K, predicted frames
  int64_t height = 64;
  int64_t width = 64;
  int64_t c_in = 1;
  int64_t c_out = 1;
  std::vector<int64_t> channels = {64, 128};  // per hierarchy, fine to coarse
  int64_t blocks = 4;                         // attention blocks per hierarchy
  PatternConfig pattern;                      // encoder pattern; empty stages -> axial
  int64_t globals = 8;                        // encoder global vectors (0 disables)
  int64_t init_downsample = 2;
  int64_t heads = 4;
  uint64_t seed = 1;  // parameter initialization stream
};

void validate_config(const ModelConfig& cfg);
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
// Stable digest of the canonical JSON form, for checkpoint compatibility.
uint64_t config_hash(const ModelConfig& cfg);

// Spatial extent of hierarchy level l (0 = finest attention level).
std::array<int64_t, 2> level_extent(const ModelConfig& cfg, int64_t level);

template <typename T>
struct ConvParams {
  TensorT<T> w, b;  // w: [3,3,Cin,Cout]
};
template <typename T>
struct GnParams {
  TensorT<T> gamma, beta;
};

// Axis-factorized learned positional embedding; the [t,h,w,C] tile is the
// broadcast sum of the three per-axis tables.
template <typename T>
struct PosParams {
  TensorT<T> et, eh, ew;
};

template <typename T>
struct EncLevel {
  std::vector<SelfBlockParams<T>> blocks;
  TensorT<T> g0;                       // initial global vectors [P,C], P>0 only
  std::optional<LnParams<T>> down_ln;  // 2x patch-merge to the next level
  std::optional<LinParams<T>> down_lin;
};

template <typename T>
struct DecLevel {
  std::vector<CrossBlockParams<T>> blocks;
  std::optional<ConvParams<T>> up_conv;  // NNI 2x + conv to the next-finer level
};

// The full parameter manifest. All tensors are registered in `ps` in build
// order, which fixes the checkpoint layout; the typed fields share buffers
// with the store.
template <typename T>
struct Model {
  ModelConfig cfg;
  ParamStore<T> ps;

  ConvParams<T> stem_conv;
  GnParams<T> stem_gn;
  LnParams<T> stem_ln;
  LinParams<T> stem_lin;
  PosParams<T> enc_pos;

  std::vector<EncLevel<T>> enc;
  PosParams<T> dec_pos;  // decoder seed at the coarsest level
  std::vector<DecLevel<T>> dec;

  ConvParams<T> head_conv;
  GnParams<T> head_gn;
  LinParams<T> head_lin;

  int64_t param_count() const { return ps.param_count(); }
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg);

// Tracked single-sample passes; x: [T,H,W,c_in]. encode returns one memory
// per hierarchy (fine to coarse); decode reads them fine-to-coarse mirrored.
template <typename T>
std::vector<Var<T>> model_encode(Binder<T>& bind, const Model<T>& m, Var<T> x);
template <typename T>
Var<T> model_decode(Binder<T>& bind, const Model<T>& m, const std::vector<Var<T>>& memories);
template <typename T>
Var<T> model_forward(Binder<T>& bind, const Model<T>& m, Var<T> x);

// Untracked inference. predict takes [T,H,W,c_in]; predict_batch loops the
// leading batch axis of [B,T,H,W,c_in].
template <typename T>
TensorT<T> predict(const Model<T>& m, const TensorT<T>& x);
template <typename T>
TensorT<T> predict_batch(const Model<T>& m, const TensorT<T>& x);

}  // namespace cubecast
