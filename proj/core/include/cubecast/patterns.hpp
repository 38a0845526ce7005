#pragma once
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cubecast/cuboid.hpp"

namespace cubecast {

using Dims3 = std::array<int64_t, 3>;

// A named stage sequence for one attention block, plus the number of global
// vectors the block carries. Named templates expand the standard families;
// "generic" takes an explicit stage list.
struct PatternConfig {
  std::string name;
  std::vector<CuboidSpec> stages;
  int64_t globals = 0;
};

bool operator==(const PatternConfig& a, const PatternConfig& b);

// Text form of a stage list: "(bT,bH,bW)/strategy/(sT,sH,sW)" joined by "->".
std::string format_stages(const std::vector<CuboidSpec>& stages);
std::vector<CuboidSpec> parse_stages(const std::string& text);

// JSON document {"name", "stages":[{"size","strategy","shift"}], "globals"}.
std::string pattern_to_json(const PatternConfig& cfg);
PatternConfig pattern_from_json(const std::string& text);

// Optional template parameters; a family that needs one it does not get
// (directly or encoded in the name) raises a configuration error.
struct PatternParams {
  int64_t p = 0;  // video_swin temporal window
  int64_t m = 0;  // video_swin spatial window / dilate block size
};

// Expands a named template for a [T,H,W] extent:
//   axial                 (T,1,1) -> (1,H,1) -> (1,1,W), all local
//   divided_space_time    (T,1,1) -> (1,H,W)
//   video_swin            (p,m,m) -> (p,m,m) shifted (p/2,m/2,m/2)
//   spatial_local_dilate  (T,1,1) -> (1,m,m) local -> (1,m,m) dilated
//   axial_space_dilate    (T,1,1) -> (1,H/m,1) dilated -> (1,H/m,1) local
//                                 -> (1,1,W/m) dilated -> (1,1,W/m) local
//   generic:<stage text>  explicit stages in the format_stages syntax
// Parameters may ride on the name ("video_swin_2x8", "axial_space_dilate_2")
// or come via params; "spatial_local_global" is accepted as an alias of
// spatial_local_dilate. m must divide H and W where the family divides by it.
PatternConfig build_pattern(const std::string& name, const Dims3& dims,
                            const PatternParams& params = {}, int64_t globals = 0);

// Padded extent each stage operates on after clamping, with a flag for stages
// whose requested cuboid exceeded the input extent (warning only).
struct StageShape {
  Dims3 padded{};
  bool clamped = false;
};
std::vector<StageShape> validate_pattern(const PatternConfig& cfg, const Dims3& dims);

// Analytic per-stage cost of one attention block running the pattern on a
// [T,H,W,C] tensor with P global vectors and `heads` heads. Counts mirror the
// kernel instrumentation exactly: multiply-accumulates in the q/k/v/output
// projections, score and attention-value contractions, and FFN linears, plus
// softmax at 5 flops per element. LayerNorm, GeLU, biases and gathers are
// uncounted on both sides. N = T*H*W, L = clamped cuboid volume, ncub counts
// cuboids of the padded extent.
struct StageCost {
  CuboidSpec spec;  // after clamping to the extent
  Dims3 padded{};
  int64_t ncub = 0;
  int64_t cublen = 0;
  int64_t proj_macs = 0;     // q/k/v/out on tokens + k/v on globals: 4NC^2 + 2PC^2
  int64_t attend_macs = 0;   // scores + values: 2*ncub*L*(L+P)*C
  int64_t ffn_macs = 0;      // 8NC^2
  int64_t gproj_macs = 0;    // global update q/k/v/out: 4PC^2
  int64_t gattend_macs = 0;  // global update scores + values: 2*P*(P+N)*C
  int64_t gffn_macs = 0;     // 8PC^2
  int64_t softmax_flops = 0;
  int64_t attn_map_elems = 0;  // heads*ncub*L*(L+P) + heads*P*(P+N)
  int64_t macs() const {
    return proj_macs + attend_macs + ffn_macs + gproj_macs + gattend_macs + gffn_macs;
  }
};

struct CostReport {
  std::vector<StageCost> stages;
  int64_t param_count = 0;     // block parameters (global set included when P>0)
  int64_t attention_macs = 0;  // projections + score/value terms, both paths
  int64_t ffn_macs = 0;
  int64_t total_macs = 0;
  int64_t softmax_flops = 0;
  int64_t attn_map_elems = 0;
  int64_t attn_map_bytes = 0;  // at 4 bytes per element
  // Single-cuboid (T,H,W) baseline with the same C, P and heads.
  int64_t dense_attend_macs = 0;
  int64_t dense_total_macs = 0;
  int64_t total_flops() const { return 2 * total_macs + softmax_flops; }
};

CostReport cost_model(const PatternConfig& cfg, const Dims3& dims, int64_t channels,
                      int64_t globals, int64_t heads);

// Parameter count of one attention block at `channels` wide: per stage a
// LayerNorm, four projections and an FFN; plus one more LayerNorm / projection
// set / FFN for the shared global path when P>0.
int64_t block_param_count(int64_t nstages, int64_t channels, int64_t globals);

// The pattern sweep: every family, with and without 8 global vectors.
std::vector<PatternConfig> enumerate_search_space(const Dims3& dims = {10, 32, 32});

}  // namespace cubecast
