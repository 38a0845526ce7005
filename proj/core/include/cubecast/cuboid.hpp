#pragma once
#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cubecast/tensor.hpp"

namespace cubecast {

enum class Strategy { local, dilated };

std::string strategy_str(Strategy s);
Strategy strategy_from(const std::string& s);

// One decomposition stage: cuboid size per axis (T,H,W), the partition
// strategy, and a cyclic shift applied on the padded axes.
struct CuboidSpec {
  std::array<int64_t, 3> size{1, 1, 1};
  Strategy strategy = Strategy::local;
  std::array<int64_t, 3> shift{0, 0, 0};
};

bool operator==(const CuboidSpec& a, const CuboidSpec& b);

// Index maps for one (extent, spec) pair. Axes are padded up to a multiple of
// the cuboid size; shifts are normalized modulo the padded extent. With
// n = per-axis cuboid index, i = per-axis slot index, b = cuboid size and
// m = padded_extent / b the padded coordinate of a slot is
//   local:   (shift + n*b + i) mod padded extent
//   dilated: (shift + i*m + n) mod padded extent
// Both are bijections of the padded axis, so the 3-D maps partition the padded
// volume exactly; slots that land outside the true extent are padding.
struct CuboidGeometry {
  std::array<int64_t, 3> extent{};    // input (T,H,W)
  std::array<int64_t, 3> padded{};    // per-axis padded extents
  std::array<int64_t, 3> bsize{};     // cuboid size
  std::array<int64_t, 3> ncub_ax{};   // cuboids per axis
  int64_t ncub = 0;                   // total cuboids
  int64_t cublen = 0;                 // slots per cuboid (bT*bH*bW)
  int64_t valid = 0;                  // true (unpadded) cells
  // gather[cub*cublen + slot] = flat index into the T*H*W input, or -1 for a
  // padded slot.
  std::vector<int32_t> gather;
  // scatter[flat input index] = cub*cublen + slot; exact inverse of gather on
  // the valid cells.
  std::vector<int32_t> scatter;
};

CuboidGeometry build_geometry(const std::array<int64_t, 3>& extent, const CuboidSpec& spec);

// Cuboid spec with per-axis sizes capped at the extent, as the attention
// layers apply it before building geometry.
CuboidSpec clamp_spec(const CuboidSpec& spec, const std::array<int64_t, 3>& extent);

// Tensor forms of the maps. decompose pads with zeros and returns
// [n_cuboids, bT*bH*bW, C]; merge inverts it exactly on the valid cells.
template <typename T>
TensorT<T> decompose(const TensorT<T>& x, const CuboidSpec& spec);
template <typename T>
TensorT<T> merge(const TensorT<T>& cuboids, const std::array<int64_t, 3>& extent,
                 const CuboidSpec& spec);

}  // namespace cubecast
