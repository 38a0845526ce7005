#include "cubecast/cuboid.hpp"

#include <stdexcept>

namespace cubecast {

std::string strategy_str(Strategy s) {
  return s == Strategy::local ? "local" : "dilated";
}

Strategy strategy_from(const std::string& s) {
  if (s == "local") return Strategy::local;
  if (s == "dilated") return Strategy::dilated;
  throw std::runtime_error("unknown strategy '" + s + "'");
}

bool operator==(const CuboidSpec& a, const CuboidSpec& b) {
  return a.size == b.size && a.strategy == b.strategy && a.shift == b.shift;
}

CuboidSpec clamp_spec(const CuboidSpec& spec, const std::array<int64_t, 3>& extent) {
  CuboidSpec s = spec;
  for (int a = 0; a < 3; ++a)
    if (s.size[a] > extent[a]) s.size[a] = extent[a];
  return s;
}

CuboidGeometry build_geometry(const std::array<int64_t, 3>& extent, const CuboidSpec& spec) {
  CuboidGeometry g;
  g.extent = extent;
  g.bsize = spec.size;
  std::array<int64_t, 3> shift{};
  for (int a = 0; a < 3; ++a) {
    if (extent[a] <= 0) throw std::runtime_error("build_geometry: extent must be positive");
    if (spec.size[a] <= 0) throw std::runtime_error("build_geometry: cuboid size must be positive");
    g.ncub_ax[a] = (extent[a] + spec.size[a] - 1) / spec.size[a];
    g.padded[a] = g.ncub_ax[a] * spec.size[a];
    shift[a] = ((spec.shift[a] % g.padded[a]) + g.padded[a]) % g.padded[a];
  }
  g.ncub = g.ncub_ax[0] * g.ncub_ax[1] * g.ncub_ax[2];
  g.cublen = spec.size[0] * spec.size[1] * spec.size[2];
  g.valid = extent[0] * extent[1] * extent[2];

  // Per-axis padded coordinate of (cuboid n, slot i).
  auto axis_coord = [&](int a, int64_t n, int64_t i) -> int64_t {
    int64_t c;
    if (spec.strategy == Strategy::local) {
      c = shift[a] + n * spec.size[a] + i;
    } else {
      c = shift[a] + i * g.ncub_ax[a] + n;
    }
    return c % g.padded[a];
  };

  g.gather.assign(static_cast<size_t>(g.ncub * g.cublen), -1);
  g.scatter.assign(static_cast<size_t>(g.valid), -1);
  const auto& bs = spec.size;
  for (int64_t nt = 0; nt < g.ncub_ax[0]; ++nt)
    for (int64_t nh = 0; nh < g.ncub_ax[1]; ++nh)
      for (int64_t nw = 0; nw < g.ncub_ax[2]; ++nw) {
        const int64_t cub = (nt * g.ncub_ax[1] + nh) * g.ncub_ax[2] + nw;
        for (int64_t it = 0; it < bs[0]; ++it) {
          const int64_t t = axis_coord(0, nt, it);
          for (int64_t ih = 0; ih < bs[1]; ++ih) {
            const int64_t h = axis_coord(1, nh, ih);
            for (int64_t iw = 0; iw < bs[2]; ++iw) {
              const int64_t w = axis_coord(2, nw, iw);
              const int64_t slot = cub * g.cublen + (it * bs[1] + ih) * bs[2] + iw;
              if (t < extent[0] && h < extent[1] && w < extent[2]) {
                const int64_t flat = (t * extent[1] + h) * extent[2] + w;
                g.gather[static_cast<size_t>(slot)] = static_cast<int32_t>(flat);
                g.scatter[static_cast<size_t>(flat)] = static_cast<int32_t>(slot);
              }
            }
          }
        }
      }
  for (int64_t f = 0; f < g.valid; ++f)
    if (g.scatter[static_cast<size_t>(f)] < 0)
      throw std::runtime_error("build_geometry: index map is not a bijection");
  return g;
}

template <typename T>
TensorT<T> decompose(const TensorT<T>& x, const CuboidSpec& spec) {
  if (x.ndim() != 4) throw std::runtime_error("decompose: expected [T,H,W,C]");
  const std::array<int64_t, 3> ext{x.shape()[0], x.shape()[1], x.shape()[2]};
  const int64_t C = x.shape()[3];
  const CuboidGeometry g = build_geometry(ext, spec);
  TensorT<T> out({g.ncub, g.cublen, C});
  const T* src = x.data();
  T* dst = out.data();
  const int64_t slots = g.ncub * g.cublen;
  for (int64_t s = 0; s < slots; ++s) {
    const int32_t f = g.gather[static_cast<size_t>(s)];
    if (f < 0) continue;
    const T* row = src + static_cast<int64_t>(f) * C;
    std::copy(row, row + C, dst + s * C);
  }
  return out;
}

template <typename T>
TensorT<T> merge(const TensorT<T>& cuboids, const std::array<int64_t, 3>& extent,
                 const CuboidSpec& spec) {
  const CuboidGeometry g = build_geometry(extent, spec);
  if (cuboids.ndim() != 3 || cuboids.shape()[0] != g.ncub || cuboids.shape()[1] != g.cublen)
    throw std::runtime_error("merge: shape does not match geometry");
  const int64_t C = cuboids.shape()[2];
  TensorT<T> out({extent[0], extent[1], extent[2], C});
  const T* src = cuboids.data();
  T* dst = out.data();
  for (int64_t f = 0; f < g.valid; ++f) {
    const int64_t s = g.scatter[static_cast<size_t>(f)];
    const T* row = src + s * C;
    std::copy(row, row + C, dst + f * C);
  }
  return out;
}

template TensorT<float> decompose(const TensorT<float>&, const CuboidSpec&);
template TensorT<double> decompose(const TensorT<double>&, const CuboidSpec&);
template TensorT<float> merge(const TensorT<float>&, const std::array<int64_t, 3>&,
                              const CuboidSpec&);
template TensorT<double> merge(const TensorT<double>&, const std::array<int64_t, 3>&,
                               const CuboidSpec&);

}  // namespace cubecast
