#pragma once
#include <memory>

#include "cubecast/cuboid.hpp"
#include "cubecast/tape.hpp"

namespace cubecast {

// Differentiable kernels. Every op computes a fresh output tensor, checks it
// for non-finite values, and records a backward closure when an input is
// tracked. Shapes are validated up front; violations throw invalid_argument.

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);  // same shape

template <typename T>
Var<T> scale(const Var<T>& a, T s);

// x: [..., C] plus row vector v: [C], broadcast over leading dims.
template <typename T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& v);

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s);

// a: [m,k] x b: [k,n] -> [m,n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

// x: [n,k], w: [k,m], b: [m] -> x*w + b
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

// Numerically stable softmax along `axis` (negative counts from the back).
template <typename T>
Var<T> softmax(const Var<T>& x, int axis);

// Layer norm over the last dimension. gamma/beta: [C].
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

// Group norm over the channel (last) dimension of [F,H,W,C] with
// min(16, C) groups; statistics are computed per (frame, group) over
// H*W*(C/groups). C must be a multiple of the group count.
template <typename T>
Var<T> group_norm16(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

// 3x3 same-padding convolution applied to each leading frame of [F,H,W,Ci].
// w: [3,3,Ci,Co], b: [Co].
template <typename T>
Var<T> conv2d_3x3(const Var<T>& x, const Var<T>& w, const Var<T>& b);

// [F,H,W,C] -> [F,H/p,W/p,p*p*C]; output channel block (dy*p+dx) holds the
// input pixel at offset (dy,dx) inside each patch. H, W must divide by p.
template <typename T>
Var<T> patch_merge(const Var<T>& x, int64_t p);

// Exact inverse of patch_merge (pure helper, used by tests).
template <typename T>
TensorT<T> patch_split(const TensorT<T>& x, int64_t p);

// Nearest-neighbour upsample of [F,H,W,C] to [F,Ht,Wt,C]; source index is
// floor(i*H/Ht). Requires Ht >= H, Wt >= W.
template <typename T>
Var<T> nearest_upsample(const Var<T>& x, int64_t ht, int64_t wt);

// tanh-approximation GeLU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
template <typename T>
Var<T> gelu(const Var<T>& x);

// Exact Phi-based GeLU, non-differentiable reference for tests.
template <typename T>
TensorT<T> gelu_exact(const TensorT<T>& x);

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T alpha);

// Broadcast-sum of three axis embeddings into a [t,h,w,C] tile:
// out[a,b,c,:] = et[a,:] + eh[b,:] + ew[c,:]
template <typename T>
Var<T> pos_tile(const Var<T>& et, const Var<T>& eh, const Var<T>& ew);

// Mean over all elements of (pred - target)^2; target is a constant.
template <typename T>
Var<T> mse_mean(const Var<T>& pred, const TensorT<T>& target);

// ---- fused attention cores -------------------------------------------------
// q,k,v: [N,C] projected tokens in input order (N = T*H*W). kg,vg: [P,C]
// projected global keys/values (undefined vars for P = 0). The op gathers
// tokens into cuboids via geom, runs masked multi-head attention per cuboid
// with the global columns appended after the token columns, zeroes padded
// query rows, and scatters back to [N,C]. Scale is 1/sqrt(C/heads).
template <typename T>
Var<T> cuboid_mha(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& kg,
                  const Var<T>& vg, std::shared_ptr<const CuboidGeometry> geom, int heads);

// Global-vector update attention: queries qg: [P,C]; keys/values are the row
// concatenation [kg; kx] / [vg; vx] with kx,vx: [N,C] shared with the cuboid
// path. Single joint softmax over P+N columns per head.
template <typename T>
Var<T> global_mha(const Var<T>& qg, const Var<T>& kg, const Var<T>& vg, const Var<T>& kx,
                  const Var<T>& vx, int heads);

// Cross attention: queries decomposed by qgeom over the decoder grid, keys and
// values by kvgeom over the memory grid; cuboids are paired by index (the two
// geometries must produce the same cuboid count). Padded key columns are
// masked, padded query rows zeroed.
template <typename T>
Var<T> cross_mha(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 std::shared_ptr<const CuboidGeometry> qgeom,
                 std::shared_ptr<const CuboidGeometry> kvgeom, int heads);

}  // namespace cubecast
