#include "cubecast/model.hpp"

#include <cstring>
#include <stdexcept>

#include <json.hpp>

#include "cubecast/ops.hpp"

namespace cubecast {

namespace {

constexpr double kLeakySlope = 0.1;

int64_t pow2(int64_t e) { return int64_t{1} << e; }

}  // namespace

void validate_config(const ModelConfig& cfg) {
  auto fail = [](const std::string& msg) { throw std::runtime_error("model config: " + msg); };
  if (cfg.t_in < 1 || cfg.t_out < 1) fail("sequence lengths must be positive");
  if (cfg.height < 1 || cfg.width < 1) fail("frame extents must be positive");
  if (cfg.c_in < 1 || cfg.c_out < 1) fail("channel counts must be positive");
  if (cfg.channels.empty()) fail("needs at least one hierarchy");
  if (cfg.blocks < 1) fail("needs at least one block per hierarchy");
  if (cfg.heads < 1) fail("needs at least one head");
  if (cfg.globals < 0) fail("global vector count cannot be negative");
  if (cfg.init_downsample < 1) fail("initial downsample must be at least 1");
  if (cfg.height % cfg.init_downsample != 0 || cfg.width % cfg.init_downsample != 0)
    fail("frame extent " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
         " not divisible by initial downsample " + std::to_string(cfg.init_downsample));
  const int64_t levels = static_cast<int64_t>(cfg.channels.size());
  const int64_t h0 = cfg.height / cfg.init_downsample, w0 = cfg.width / cfg.init_downsample;
  for (int64_t l = 0; l < levels; ++l) {
    if (cfg.channels[l] < 1) fail("channel widths must be positive");
    if (cfg.channels[l] % cfg.heads != 0)
      fail("head count " + std::to_string(cfg.heads) + " must divide channels " +
           std::to_string(cfg.channels[l]));
    if (h0 % pow2(l) != 0 || w0 % pow2(l) != 0 || h0 / pow2(l) < 1 || w0 / pow2(l) < 1)
      fail("spatial extent " + std::to_string(h0) + "x" + std::to_string(w0) +
           " cannot be halved " + std::to_string(l) + " times");
  }
  const int64_t c0 = cfg.channels[0];
  const int64_t groups = c0 < 16 ? c0 : 16;
  if (c0 % groups != 0)
    fail("stem channels " + std::to_string(c0) + " not divisible into " + std::to_string(groups) +
         " norm groups");
  for (const auto& s : cfg.pattern.stages)
    for (int a = 0; a < 3; ++a)
      if (s.size[a] < 1) fail("pattern cuboid sizes must be positive");
}

std::array<int64_t, 2> level_extent(const ModelConfig& cfg, int64_t level) {
  return {cfg.height / cfg.init_downsample / pow2(level),
          cfg.width / cfg.init_downsample / pow2(level)};
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["t_in"] = cfg.t_in;
  j["t_out"] = cfg.t_out;
  j["height"] = cfg.height;
  j["width"] = cfg.width;
  j["c_in"] = cfg.c_in;
  j["c_out"] = cfg.c_out;
  j["channels"] = cfg.channels;
  j["blocks"] = cfg.blocks;
  j["pattern"] = cfg.pattern.stages.empty() ? nlohmann::json()
                                            : nlohmann::json::parse(pattern_to_json(cfg.pattern));
  j["globals"] = cfg.globals;
  j["init_downsample"] = cfg.init_downsample;
  j["heads"] = cfg.heads;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("model config parse error: ") + e.what());
  }
  ModelConfig cfg;
  cfg.t_in = j.value("t_in", cfg.t_in);
  cfg.t_out = j.value("t_out", cfg.t_out);
  cfg.height = j.value("height", cfg.height);
  cfg.width = j.value("width", cfg.width);
  cfg.c_in = j.value("c_in", cfg.c_in);
  cfg.c_out = j.value("c_out", cfg.c_out);
  cfg.channels = j.value("channels", cfg.channels);
  cfg.blocks = j.value("blocks", cfg.blocks);
  if (j.contains("pattern") && !j["pattern"].is_null())
    cfg.pattern = pattern_from_json(j["pattern"].dump());
  cfg.globals = j.value("globals", cfg.globals);
  cfg.init_downsample = j.value("init_downsample", cfg.init_downsample);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.seed = j.value("seed", cfg.seed);
  validate_config(cfg);
  return cfg;
}

uint64_t config_hash(const ModelConfig& cfg) {
  const std::string s = model_config_to_json(cfg);
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

template <typename T>
ConvParams<T> make_conv(ParamStore<T>& ps, const std::string& prefix, int64_t ci, int64_t co,
                        Rng& rng) {
  ConvParams<T> p;
  p.w = ps.add(prefix + ".w", TensorT<T>::trunc_normal({3, 3, ci, co}, T(0.02), rng));
  p.b = ps.add(prefix + ".b", TensorT<T>({co}));
  return p;
}

template <typename T>
GnParams<T> make_gn(ParamStore<T>& ps, const std::string& prefix, int64_t c) {
  GnParams<T> p;
  p.gamma = ps.add(prefix + ".gamma", TensorT<T>::full({c}, T(1)));
  p.beta = ps.add(prefix + ".beta", TensorT<T>({c}));
  return p;
}

template <typename T>
PosParams<T> make_pos(ParamStore<T>& ps, const std::string& prefix, int64_t t, int64_t h,
                      int64_t w, int64_t c, Rng& rng) {
  PosParams<T> p;
  p.et = ps.add(prefix + ".t", TensorT<T>::trunc_normal({t, c}, T(0.02), rng));
  p.eh = ps.add(prefix + ".h", TensorT<T>::trunc_normal({h, c}, T(0.02), rng));
  p.ew = ps.add(prefix + ".w", TensorT<T>::trunc_normal({w, c}, T(0.02), rng));
  return p;
}

std::vector<CuboidSpec> axial_stages(int64_t t, int64_t h, int64_t w) {
  return build_pattern("axial", {t, h, w}).stages;
}

}  // namespace

template <typename T>
Model<T> build_model(const ModelConfig& cfg_in) {
  validate_config(cfg_in);
  Model<T> m;
  m.cfg = cfg_in;
  const ModelConfig& cfg = m.cfg;
  const int64_t levels = static_cast<int64_t>(cfg.channels.size());
  const auto [h0, w0] = level_extent(cfg, 0);
  if (m.cfg.pattern.stages.empty())
    m.cfg.pattern = build_pattern("axial", {cfg.t_in, h0, w0}, {}, cfg.globals);

  Rng rng(cfg.seed);
  ParamStore<T>& ps = m.ps;

  const int64_t c0 = cfg.channels[0];
  const int64_t merged = cfg.init_downsample * cfg.init_downsample * c0;
  m.stem_conv = make_conv(ps, "stem.conv", cfg.c_in, c0, rng);
  m.stem_gn = make_gn(ps, "stem.gn", c0);
  m.stem_ln = make_ln(ps, "stem.ln", merged);
  m.stem_lin = make_lin(ps, "stem.lin", merged, c0, rng);
  m.enc_pos = make_pos(ps, "enc.pos", cfg.t_in, h0, w0, c0, rng);

  for (int64_t l = 0; l < levels; ++l) {
    EncLevel<T> lvl;
    const int64_t c = cfg.channels[l];
    const std::string pre = "enc" + std::to_string(l);
    if (cfg.globals > 0)
      lvl.g0 = ps.add(pre + ".g0", TensorT<T>::trunc_normal({cfg.globals, c}, T(0.02), rng));
    for (int64_t d = 0; d < cfg.blocks; ++d)
      lvl.blocks.push_back(make_self_block(ps, pre + ".b" + std::to_string(d), c,
                                           static_cast<int>(cfg.heads), m.cfg.pattern.stages,
                                           cfg.globals, rng));
    if (l + 1 < levels) {
      lvl.down_ln = make_ln(ps, pre + ".down.ln", 4 * c);
      lvl.down_lin = make_lin(ps, pre + ".down.lin", 4 * c, cfg.channels[l + 1], rng);
    }
    m.enc.push_back(std::move(lvl));
  }

  const auto [hc, wc] = level_extent(cfg, levels - 1);
  m.dec_pos = make_pos(ps, "dec.pos", cfg.t_out, hc, wc, cfg.channels[levels - 1], rng);

  const CuboidSpec cross_spec =
      CuboidSpec{{std::max(cfg.t_in, cfg.t_out), 1, 1}, Strategy::local, {0, 0, 0}};
  for (int64_t l = levels - 1; l >= 0; --l) {
    DecLevel<T> lvl;
    const int64_t c = cfg.channels[l];
    const auto [hl, wl] = level_extent(cfg, l);
    const std::string pre = "dec" + std::to_string(l);
    for (int64_t d = 0; d < cfg.blocks; ++d)
      lvl.blocks.push_back(make_cross_block(ps, pre + ".b" + std::to_string(d), c,
                                            static_cast<int>(cfg.heads),
                                            axial_stages(cfg.t_out, hl, wl), cross_spec, rng));
    if (l > 0) lvl.up_conv = make_conv(ps, pre + ".up.conv", c, cfg.channels[l - 1], rng);
    m.dec.push_back(std::move(lvl));
  }

  m.head_conv = make_conv(ps, "head.conv", c0, c0, rng);
  m.head_gn = make_gn(ps, "head.gn", c0);
  m.head_lin = make_lin(ps, "head.lin", c0, cfg.c_out, rng);
  return m;
}

template <typename T>
std::vector<Var<T>> model_encode(Binder<T>& bind, const Model<T>& m, Var<T> x) {
  const ModelConfig& cfg = m.cfg;
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[0] != cfg.t_in || xs[1] != cfg.height || xs[2] != cfg.width ||
      xs[3] != cfg.c_in)
    throw std::runtime_error("encode: input must be [" + std::to_string(cfg.t_in) + "," +
                             std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "," +
                             std::to_string(cfg.c_in) + "], got " + shape_str(xs));

  Var<T> z = conv2d_3x3(x, bind(m.stem_conv.w), bind(m.stem_conv.b));
  z = group_norm16(z, bind(m.stem_gn.gamma), bind(m.stem_gn.beta));
  z = leaky_relu(z, T(kLeakySlope));
  z = patch_merge(z, cfg.init_downsample);
  z = layer_norm(z, bind(m.stem_ln.gamma), bind(m.stem_ln.beta));
  z = linear(z, bind(m.stem_lin.w), bind(m.stem_lin.b));
  z = add(z, pos_tile(bind(m.enc_pos.et), bind(m.enc_pos.eh), bind(m.enc_pos.ew)));

  const int64_t levels = static_cast<int64_t>(cfg.channels.size());
  std::vector<Var<T>> memories;
  for (int64_t l = 0; l < levels; ++l) {
    if (l > 0) {
      const EncLevel<T>& prev = m.enc[l - 1];
      z = patch_merge(z, 2);
      z = layer_norm(z, bind(prev.down_ln->gamma), bind(prev.down_ln->beta));
      z = linear(z, bind(prev.down_lin->w), bind(prev.down_lin->b));
    }
    XG<T> cur;
    cur.x = z;
    if (cfg.globals > 0) cur.g = bind(m.enc[l].g0);
    for (const auto& bp : m.enc[l].blocks) cur = self_block_forward(bind, bp, cur);
    memories.push_back(cur.x);
    z = cur.x;
  }
  return memories;
}

template <typename T>
Var<T> model_decode(Binder<T>& bind, const Model<T>& m, const std::vector<Var<T>>& memories) {
  const ModelConfig& cfg = m.cfg;
  const int64_t levels = static_cast<int64_t>(cfg.channels.size());
  if (static_cast<int64_t>(memories.size()) != levels)
    throw std::runtime_error("decode: expected " + std::to_string(levels) + " memories, got " +
                             std::to_string(memories.size()));

  Var<T> z = pos_tile(bind(m.dec_pos.et), bind(m.dec_pos.eh), bind(m.dec_pos.ew));
  for (int64_t i = 0; i < levels; ++i) {
    const int64_t l = levels - 1 - i;  // m.dec[i] decodes hierarchy level l
    for (const auto& bp : m.dec[i].blocks)
      z = cross_block_forward(bind, bp, z, memories[l]);
    if (l > 0) {
      const auto [hn, wn] = level_extent(cfg, l - 1);
      z = nearest_upsample(z, hn, wn);
      z = conv2d_3x3(z, bind(m.dec[i].up_conv->w), bind(m.dec[i].up_conv->b));
    }
  }
  z = nearest_upsample(z, cfg.height, cfg.width);
  z = conv2d_3x3(z, bind(m.head_conv.w), bind(m.head_conv.b));
  z = group_norm16(z, bind(m.head_gn.gamma), bind(m.head_gn.beta));
  z = leaky_relu(z, T(kLeakySlope));
  z = linear(z, bind(m.head_lin.w), bind(m.head_lin.b));
  return z;
}

template <typename T>
Var<T> model_forward(Binder<T>& bind, const Model<T>& m, Var<T> x) {
  return model_decode(bind, m, model_encode(bind, m, x));
}

template <typename T>
TensorT<T> predict(const Model<T>& m, const TensorT<T>& x) {
  Binder<T> bind(nullptr);
  return model_forward(bind, m, make_const(x)).val;
}

template <typename T>
TensorT<T> predict_batch(const Model<T>& m, const TensorT<T>& x) {
  if (x.ndim() != 5)
    throw std::runtime_error("predict_batch expects [B,T,H,W,C], got " + shape_str(x.shape()));
  const int64_t b = x.dim(0);
  const int64_t in_stride = x.size() / b;
  TensorT<T> out;
  int64_t out_stride = 0;
  for (int64_t i = 0; i < b; ++i) {
    TensorT<T> sample({x.dim(1), x.dim(2), x.dim(3), x.dim(4)});
    std::memcpy(sample.data(), x.data() + i * in_stride, sizeof(T) * in_stride);
    const TensorT<T> y = predict(m, sample);
    if (i == 0) {
      out_stride = y.size();
      out = TensorT<T>({b, y.dim(0), y.dim(1), y.dim(2), y.dim(3)});
    }
    std::memcpy(out.data() + i * out_stride, y.data(), sizeof(T) * out_stride);
  }
  return out;
}

#define CUBECAST_INSTANTIATE_MODEL(T)                                                     \
  template struct Model<T>;                                                               \
  template Model<T> build_model(const ModelConfig&);                                      \
  template std::vector<Var<T>> model_encode(Binder<T>&, const Model<T>&, Var<T>);         \
  template Var<T> model_decode(Binder<T>&, const Model<T>&, const std::vector<Var<T>>&);  \
  template Var<T> model_forward(Binder<T>&, const Model<T>&, Var<T>);                     \
  template TensorT<T> predict(const Model<T>&, const TensorT<T>&);                        \
  template TensorT<T> predict_batch(const Model<T>&, const TensorT<T>&);

CUBECAST_INSTANTIATE_MODEL(float)
CUBECAST_INSTANTIATE_MODEL(double)

}  // namespace cubecast
