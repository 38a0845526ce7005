#include "cubecast/attention.hpp"

#include <stdexcept>

#include "cubecast/ops.hpp"

namespace cubecast {

template <typename T>
TensorT<T>& ParamStore<T>::add(const std::string& name, TensorT<T> init) {
  if (index_.count(name)) throw std::runtime_error("duplicate parameter '" + name + "'");
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(init));
  return items_.back().second;
}

template <typename T>
TensorT<T>& ParamStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::runtime_error("unknown parameter '" + name + "'");
  return items_[it->second].second;
}

template <typename T>
const TensorT<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::runtime_error("unknown parameter '" + name + "'");
  return items_[it->second].second;
}

template <typename T>
int64_t ParamStore<T>::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

template <typename T>
Var<T> Binder<T>::operator()(const TensorT<T>& p) {
  if (!tape_) return make_const(p);  // inference: no recording
  auto it = cache_.find(p.data());
  if (it != cache_.end()) return Var<T>{p, tape_, it->second};
  Var<T> v = make_leaf(*tape_, p);
  cache_[p.data()] = v.node;
  return v;
}

template <typename T>
int Binder<T>::node_of(const TensorT<T>& p) const {
  auto it = cache_.find(p.data());
  return it == cache_.end() ? -1 : it->second;
}

template <typename T>
LnParams<T> make_ln(ParamStore<T>& ps, const std::string& prefix, int64_t c) {
  LnParams<T> p;
  p.gamma = ps.add(prefix + ".gamma", TensorT<T>::full({c}, T(1)));
  p.beta = ps.add(prefix + ".beta", TensorT<T>({c}));
  return p;
}

template <typename T>
LinParams<T> make_lin(ParamStore<T>& ps, const std::string& prefix, int64_t cin, int64_t cout,
                      Rng& rng) {
  LinParams<T> p;
  p.w = ps.add(prefix + ".w", TensorT<T>::trunc_normal({cin, cout}, T(0.02), rng));
  p.b = ps.add(prefix + ".b", TensorT<T>({cout}));
  return p;
}

template <typename T>
FfnParams<T> make_ffn(ParamStore<T>& ps, const std::string& prefix, int64_t c, Rng& rng) {
  FfnParams<T> p;
  p.ln = make_ln(ps, prefix + ".ln", c);
  p.lin1 = make_lin(ps, prefix + ".lin1", c, 4 * c, rng);
  p.lin2 = make_lin(ps, prefix + ".lin2", 4 * c, c, rng);
  return p;
}

template <typename T>
static AttnProj<T> make_proj(ParamStore<T>& ps, const std::string& prefix, int64_t c, Rng& rng) {
  AttnProj<T> p;
  p.q = make_lin(ps, prefix + ".q", c, c, rng);
  p.k = make_lin(ps, prefix + ".k", c, c, rng);
  p.v = make_lin(ps, prefix + ".v", c, c, rng);
  p.o = make_lin(ps, prefix + ".o", c, c, rng);
  return p;
}

template <typename T>
StageParams<T> make_stage(ParamStore<T>& ps, const std::string& prefix, int64_t c,
                          const CuboidSpec& spec, Rng& rng) {
  StageParams<T> p;
  p.spec = spec;
  p.ln_x = make_ln(ps, prefix + ".ln_x", c);
  p.proj = make_proj(ps, prefix + ".attn", c, rng);
  p.ffn = make_ffn(ps, prefix + ".ffn", c, rng);
  return p;
}

template <typename T>
SelfBlockParams<T> make_self_block(ParamStore<T>& ps, const std::string& prefix, int64_t c,
                                   int heads, const std::vector<CuboidSpec>& pattern,
                                   int64_t pglobal, Rng& rng) {
  if (pattern.empty()) throw std::runtime_error("self block needs at least one stage");
  if (c % heads != 0) throw std::runtime_error("head count must divide channels");
  SelfBlockParams<T> p;
  p.channels = c;
  p.heads = heads;
  p.pglobal = pglobal;
  for (size_t l = 0; l < pattern.size(); ++l)
    p.stages.push_back(make_stage(ps, prefix + ".s" + std::to_string(l), c, pattern[l], rng));
  if (pglobal > 0) {
    GlobalParams<T> g;
    g.ln_g = make_ln(ps, prefix + ".g.ln_g", c);
    g.proj = make_proj(ps, prefix + ".g.attn", c, rng);
    g.ffn = make_ffn(ps, prefix + ".g.ffn", c, rng);
    p.global = std::move(g);
  }
  return p;
}

template <typename T>
CrossBlockParams<T> make_cross_block(ParamStore<T>& ps, const std::string& prefix, int64_t c,
                                     int heads, const std::vector<CuboidSpec>& pattern,
                                     const CuboidSpec& cross_spec, Rng& rng) {
  if (c % heads != 0) throw std::runtime_error("head count must divide channels");
  CrossBlockParams<T> p;
  p.channels = c;
  p.heads = heads;
  for (size_t l = 0; l < pattern.size(); ++l)
    p.self_stages.push_back(make_stage(ps, prefix + ".s" + std::to_string(l), c, pattern[l], rng));
  p.cross = make_stage(ps, prefix + ".cross", c, cross_spec, rng);
  return p;
}

template <typename T>
Var<T> ln_forward(Binder<T>& bind, const LnParams<T>& p, Var<T> x) {
  return layer_norm(x, bind(p.gamma), bind(p.beta));
}

template <typename T>
Var<T> lin_forward(Binder<T>& bind, const LinParams<T>& p, Var<T> x) {
  return linear(x, bind(p.w), bind(p.b));
}

template <typename T>
Var<T> ffn_forward(Binder<T>& bind, const FfnParams<T>& p, Var<T> x) {
  Var<T> z = ln_forward(bind, p.ln, x);
  z = lin_forward(bind, p.lin1, z);
  z = gelu(z);
  z = lin_forward(bind, p.lin2, z);
  return add(x, z);
}

template <typename T>
static Var<T> flat_tokens(const Var<T>& x) {
  const Shape& s = x.shape();
  return reshape(x, {s[0] * s[1] * s[2], s[3]});
}

template <typename T>
XG<T> self_stage_forward(Binder<T>& bind, const StageParams<T>& sp, const GlobalParams<T>* gp,
                         int heads, XG<T> in) {
  const Shape& xs = in.x.shape();
  if (xs.size() != 4) throw std::runtime_error("self stage expects [T,H,W,C]");
  const std::array<int64_t, 3> extent{xs[0], xs[1], xs[2]};
  auto geom = std::make_shared<const CuboidGeometry>(
      build_geometry(extent, clamp_spec(sp.spec, extent)));

  // Both attention paths read the normalized old x and old g.
  Var<T> x_ln = flat_tokens(ln_forward(bind, sp.ln_x, in.x));
  Var<T> qx = lin_forward(bind, sp.proj.q, x_ln);
  Var<T> kx = lin_forward(bind, sp.proj.k, x_ln);
  Var<T> vx = lin_forward(bind, sp.proj.v, x_ln);

  Var<T> g_ln, kga, vga;
  if (gp) {
    g_ln = ln_forward(bind, gp->ln_g, in.g);
    // Global vectors enter every cuboid's keys/values through the stage's own
    // key/value projections.
    kga = linear(g_ln, bind(sp.proj.k.w), bind(sp.proj.k.b));
    vga = linear(g_ln, bind(sp.proj.v.w), bind(sp.proj.v.b));
  }

  Var<T> a = cuboid_mha(qx, kx, vx, kga, vga, geom, heads);
  a = lin_forward(bind, sp.proj.o, a);
  XG<T> out;
  out.x = add(in.x, reshape(a, xs));
  out.x = ffn_forward(bind, sp.ffn, out.x);

  if (gp) {
    // Global update: queries and global-side keys/values from the block's
    // global projections; token keys/values reused from the stage.
    Var<T> qg = lin_forward(bind, gp->proj.q, g_ln);
    Var<T> kgg = lin_forward(bind, gp->proj.k, g_ln);
    Var<T> vgg = lin_forward(bind, gp->proj.v, g_ln);
    Var<T> ga = global_mha(qg, kgg, vgg, kx, vx, heads);
    ga = lin_forward(bind, gp->proj.o, ga);
    out.g = add(in.g, ga);
    out.g = ffn_forward(bind, gp->ffn, out.g);
  } else {
    out.g = in.g;
  }
  return out;
}

template <typename T>
XG<T> self_block_forward(Binder<T>& bind, const SelfBlockParams<T>& bp, XG<T> in) {
  const GlobalParams<T>* gp = nullptr;
  if (bp.pglobal > 0) {
    if (!bp.global) throw std::runtime_error("global path enabled without parameters");
    if (!in.g.val.defined()) throw std::runtime_error("global path enabled without vectors");
    gp = &*bp.global;
  }
  XG<T> cur = in;
  for (const auto& sp : bp.stages) cur = self_stage_forward(bind, sp, gp, bp.heads, cur);
  return cur;
}

template <typename T>
Var<T> cross_stage_forward(Binder<T>& bind, const StageParams<T>& sp, int heads, Var<T> xq,
                           Var<T> mem) {
  const Shape& qs = xq.shape();
  const Shape& ms = mem.shape();
  if (qs.size() != 4 || ms.size() != 4) throw std::runtime_error("cross stage expects [T,H,W,C]");
  if (qs[1] != ms[1] || qs[2] != ms[2] || qs[3] != ms[3])
    throw std::runtime_error("cross stage: spatial/channel extents must match");
  const std::array<int64_t, 3> qext{qs[0], qs[1], qs[2]};
  const std::array<int64_t, 3> kext{ms[0], ms[1], ms[2]};
  auto qgeom = std::make_shared<const CuboidGeometry>(
      build_geometry(qext, clamp_spec(sp.spec, qext)));
  auto kvgeom = std::make_shared<const CuboidGeometry>(
      build_geometry(kext, clamp_spec(sp.spec, kext)));
  if (qgeom->ncub != kvgeom->ncub)
    throw std::runtime_error("cross stage: query and memory cuboid grids do not pair up");

  Var<T> q = lin_forward(bind, sp.proj.q, flat_tokens(ln_forward(bind, sp.ln_x, xq)));
  // Encoder memory is consumed as-is: no LN on the key/value side.
  Var<T> mflat = flat_tokens(mem);
  Var<T> k = lin_forward(bind, sp.proj.k, mflat);
  Var<T> v = lin_forward(bind, sp.proj.v, mflat);
  Var<T> a = cross_mha(q, k, v, qgeom, kvgeom, heads);
  a = lin_forward(bind, sp.proj.o, a);
  Var<T> out = add(xq, reshape(a, qs));
  return ffn_forward(bind, sp.ffn, out);
}

template <typename T>
Var<T> cross_block_forward(Binder<T>& bind, const CrossBlockParams<T>& bp, Var<T> xq,
                           Var<T> mem) {
  XG<T> cur;
  cur.x = xq;
  for (const auto& sp : bp.self_stages)
    cur = self_stage_forward(bind, sp, static_cast<const GlobalParams<T>*>(nullptr), bp.heads,
                             cur);
  return cross_stage_forward(bind, bp.cross, bp.heads, cur.x, mem);
}

#define CUBECAST_INSTANTIATE_ATTENTION(T)                                                        \
  template class ParamStore<T>;                                                                  \
  template class Binder<T>;                                                                      \
  template LnParams<T> make_ln(ParamStore<T>&, const std::string&, int64_t);                     \
  template LinParams<T> make_lin(ParamStore<T>&, const std::string&, int64_t, int64_t, Rng&);    \
  template FfnParams<T> make_ffn(ParamStore<T>&, const std::string&, int64_t, Rng&);             \
  template StageParams<T> make_stage(ParamStore<T>&, const std::string&, int64_t,                \
                                     const CuboidSpec&, Rng&);                                   \
  template SelfBlockParams<T> make_self_block(ParamStore<T>&, const std::string&, int64_t, int,  \
                                              const std::vector<CuboidSpec>&, int64_t, Rng&);    \
  template CrossBlockParams<T> make_cross_block(ParamStore<T>&, const std::string&, int64_t,     \
                                                int, const std::vector<CuboidSpec>&,             \
                                                const CuboidSpec&, Rng&);                        \
  template Var<T> ln_forward(Binder<T>&, const LnParams<T>&, Var<T>);                            \
  template Var<T> lin_forward(Binder<T>&, const LinParams<T>&, Var<T>);                          \
  template Var<T> ffn_forward(Binder<T>&, const FfnParams<T>&, Var<T>);                          \
  template XG<T> self_stage_forward(Binder<T>&, const StageParams<T>&, const GlobalParams<T>*,   \
                                    int, XG<T>);                                                 \
  template XG<T> self_block_forward(Binder<T>&, const SelfBlockParams<T>&, XG<T>);               \
  template Var<T> cross_stage_forward(Binder<T>&, const StageParams<T>&, int, Var<T>, Var<T>);   \
  template Var<T> cross_block_forward(Binder<T>&, const CrossBlockParams<T>&, Var<T>, Var<T>);

CUBECAST_INSTANTIATE_ATTENTION(float)
CUBECAST_INSTANTIATE_ATTENTION(double)

}  // namespace cubecast
