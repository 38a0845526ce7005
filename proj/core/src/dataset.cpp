#include "cubecast/dataset.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "cubecast/glyphs.hpp"
#include "cubecast/threads.hpp"

namespace cubecast {

namespace {

uint32_t read_be32(const std::vector<uint8_t>& b, size_t off) {
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) |
         uint32_t(b[off + 3]);
}

std::string hex32(uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

IdxImages parse_idx(const std::vector<uint8_t>& bytes) {
  auto fail = [](size_t off, const std::string& msg) {
    throw std::runtime_error("idx parse error at byte " + std::to_string(off) + ": " + msg);
  };
  if (bytes.size() < 4) fail(bytes.size(), "truncated header, need 4 bytes of magic");
  const uint32_t magic = read_be32(bytes, 0);
  if (magic == 0x00000801u) fail(0, "this is a label file (magic 0x00000801), expected images");
  if (magic != 0x00000803u) fail(0, "bad magic " + hex32(magic) + ", expected 0x00000803");
  if (bytes.size() < 16) fail(bytes.size(), "truncated header, need 3 big-endian dimensions");
  IdxImages im;
  im.n = read_be32(bytes, 4);
  im.rows = read_be32(bytes, 8);
  im.cols = read_be32(bytes, 12);
  if (im.rows < 1 || im.cols < 1) fail(8, "non-positive image dimensions");
  const size_t want = static_cast<size_t>(im.n) * im.rows * im.cols;
  if (bytes.size() < 16 + want)
    fail(bytes.size(), "truncated payload, expected " + std::to_string(want) + " pixel bytes");
  if (bytes.size() > 16 + want) fail(16 + want, "trailing bytes after payload");
  im.data.assign(bytes.begin() + 16, bytes.end());
  return im;
}

IdxImages load_idx_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open idx file " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return parse_idx(bytes);
}

std::vector<std::vector<uint8_t>> glyphs_from_idx(const IdxImages& im) {
  if (im.rows != im.cols) throw std::runtime_error("idx glyphs must be square images");
  std::vector<std::vector<uint8_t>> out;
  const size_t px = static_cast<size_t>(im.rows) * im.cols;
  out.reserve(static_cast<size_t>(im.n));
  for (int64_t i = 0; i < im.n; ++i)
    out.emplace_back(im.data.begin() + i * px, im.data.begin() + (i + 1) * px);
  return out;
}

namespace {

int64_t glyph_side_of(const std::vector<std::vector<uint8_t>>& glyphs) {
  if (glyphs.empty()) throw std::runtime_error("dataset generation: no glyphs");
  const auto side = static_cast<int64_t>(std::llround(std::sqrt(double(glyphs[0].size()))));
  for (const auto& g : glyphs)
    if (static_cast<int64_t>(g.size()) != side * side)
      throw std::runtime_error("dataset generation: glyphs must share one square size");
  return side;
}

// One sample's deterministic draw order: positions (rejection-sampled),
// masses and velocities, then glyph ids.
std::vector<Body> draw_sample(Rng& rng, const PhysicsConfig& phys, int64_t n_glyphs, double span,
                              double sep_min) {
  std::vector<Body> bodies = sample_bodies(rng, phys.n_bodies, span, sep_min);
  for (auto& b : bodies) b.glyph = static_cast<int>(rng.uniform_int(n_glyphs));
  return bodies;
}

}  // namespace

std::vector<float> render_frame(const std::vector<Body>& bodies,
                                const std::vector<std::vector<uint8_t>>& glyphs,
                                int64_t glyph_side, int64_t size) {
  std::vector<float> frame(static_cast<size_t>(size) * size, 0.0f);
  for (const auto& b : bodies) {
    const auto& g = glyphs[static_cast<size_t>(b.glyph) % glyphs.size()];
    int64_t col = std::llround(b.x), row = std::llround(b.y);
    col = std::min(std::max<int64_t>(col, 0), size - glyph_side);
    row = std::min(std::max<int64_t>(row, 0), size - glyph_side);
    for (int64_t r = 0; r < glyph_side; ++r)
      for (int64_t c = 0; c < glyph_side; ++c) {
        float& px = frame[(row + r) * size + col + c];
        const float v = float(g[r * glyph_side + c]) / 255.0f;
        if (v > px) px = v;
      }
  }
  return frame;
}

SequenceDataset gen_nbody_mnist(const DatasetSpec& spec,
                                const std::vector<std::vector<uint8_t>>& glyphs,
                                int threads) {
  validate_physics(spec.physics);
  if (spec.n_samples < 1 || spec.t_in < 1 || spec.t_out < 1 || spec.size < 8)
    throw std::runtime_error("dataset spec: need n >= 1, t_in/t_out >= 1, size >= 8");
  const int64_t src_side = glyph_side_of(glyphs);
  const int64_t side = std::max<int64_t>(1, std::llround(28.0 * spec.size / 64.0));
  if (side > spec.size)
    throw std::runtime_error("dataset spec: frame too small for scaled glyphs");
  std::vector<std::vector<uint8_t>> scaled;
  scaled.reserve(glyphs.size());
  for (const auto& g : glyphs) scaled.push_back(resize_glyph(g, src_side, side));

  const double span = static_cast<double>(spec.size - side);
  const double sep_min = 12.0 * spec.size / 64.0;
  const int64_t frames = spec.t_in + spec.t_out;

  SequenceDataset ds;
  ds.kind = spec.physics.g == 0.0 ? "moving" : "nbody";
  ds.t_in = spec.t_in;
  ds.t_out = spec.t_out;
  ds.seed = spec.seed;
  ds.physics = spec.physics;
  ds.data = TensorT<float>({spec.n_samples, frames, spec.size, spec.size, 1});

  const int64_t frame_px = spec.size * spec.size;
  parallel_for(spec.n_samples, threads, [&](int64_t i) {
    Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(i)));
    const std::vector<Body> init =
        draw_sample(rng, spec.physics, static_cast<int64_t>(glyphs.size()), span, sep_min);
    const auto traj = simulate_nbody(init, spec.physics, frames - 1, span, span);
    for (int64_t f = 0; f < frames; ++f) {
      const std::vector<float> frame = render_frame(traj[f], scaled, side, spec.size);
      float* dst = ds.data.data() + (i * frames + f) * frame_px;
      for (int64_t k = 0; k < frame_px; ++k) dst[k] = frame[k];
    }
  });
  return ds;
}

SequenceDataset gen_moving_mnist(const DatasetSpec& spec,
                                 const std::vector<std::vector<uint8_t>>& glyphs,
                                 int threads) {
  DatasetSpec s = spec;
  s.physics.g = 0.0;
  s.physics.n_bodies = 2;
  return gen_nbody_mnist(s, glyphs, threads);
}

void write_dataset(const SequenceDataset& ds, const std::string& path) {
  if (ds.dtype != "u8" && ds.dtype != "f32")
    throw std::runtime_error("dataset " + path + ": unknown dtype '" + ds.dtype + "'");
  nlohmann::json meta;
  meta["magic"] = "STDS1";
  meta["dtype"] = ds.dtype;
  meta["shape"] = ds.data.shape();
  meta["t_in"] = ds.t_in;
  meta["t_out"] = ds.t_out;
  meta["kind"] = ds.kind;
  meta["seed"] = ds.seed;
  meta["config"] = nlohmann::json::parse(physics_to_json(ds.physics));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << meta.dump() << '\n';
  const int64_t n = ds.data.size();
  if (ds.dtype == "u8") {
    std::vector<uint8_t> bytes(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
      bytes[i] = static_cast<uint8_t>(std::lround(ds.data.data()[i] * 255.0f));
    out.write(reinterpret_cast<const char*>(bytes.data()), n);
  } else {
    out.write(reinterpret_cast<const char*>(ds.data.data()),
              static_cast<std::streamsize>(n * sizeof(float)));
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

SequenceDataset read_dataset(const std::string& path) {
  auto fail = [&](const std::string& msg) {
    return std::runtime_error("dataset " + path + ": " + msg);
  };
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fail("cannot open");
  std::string header;
  if (!std::getline(in, header)) throw fail("missing header line");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(header);
  } catch (const std::exception& e) {
    throw fail(std::string("header parse error: ") + e.what());
  }
  if (meta.value("magic", std::string()) != "STDS1") throw fail("bad magic");
  const std::string dtype = meta.value("dtype", std::string());
  if (dtype != "u8" && dtype != "f32") throw fail("unknown dtype '" + dtype + "'");
  const Shape shape = meta.at("shape").get<Shape>();
  if (shape.size() != 5 || shape[4] != 1) throw fail("shape must be [N,F,H,W,1]");

  SequenceDataset ds;
  ds.dtype = dtype;
  ds.kind = meta.value("kind", std::string("nbody"));
  ds.t_in = meta.value("t_in", int64_t{0});
  ds.t_out = meta.value("t_out", int64_t{0});
  ds.seed = meta.value("seed", uint64_t{0});
  if (meta.contains("config")) ds.physics = physics_from_json(meta["config"].dump());
  if (ds.t_in + ds.t_out != shape[1]) throw fail("t_in + t_out does not match the frame axis");
  ds.data = TensorT<float>(shape);

  const int64_t n = ds.data.size();
  if (dtype == "u8") {
    std::vector<uint8_t> bytes(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(bytes.data()), n);
    if (in.gcount() != n) throw fail("payload shorter than the declared shape");
    for (int64_t i = 0; i < n; ++i) ds.data.data()[i] = float(bytes[i]) / 255.0f;
  } else {
    in.read(reinterpret_cast<char*>(ds.data.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
      throw fail("payload shorter than the declared shape");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw fail("trailing bytes after payload");
  return ds;
}

ChaosReport chaos_probe(const PhysicsConfig& cfg, double velocity_delta, uint64_t seed,
                        int64_t steps, int64_t size) {
  return chaos_demo(cfg, velocity_delta, seed, steps, size).report;
}

ChaosDemo chaos_demo(const PhysicsConfig& cfg, double velocity_delta, uint64_t seed,
                     int64_t steps, int64_t size) {
  validate_physics(cfg);
  const int64_t side = std::max<int64_t>(1, std::llround(28.0 * size / 64.0));
  const double span = static_cast<double>(size - side);
  const double sep_min = 12.0 * size / 64.0;

  Rng rng(mix_seed(seed, 0));
  const auto& glyphs = procedural_glyphs();
  const std::vector<Body> base =
      draw_sample(rng, cfg, static_cast<int64_t>(glyphs.size()), span, sep_min);
  std::vector<Body> kicked = base;
  for (auto& b : kicked) {
    b.vx *= 1.0 + velocity_delta;
    b.vy *= 1.0 + velocity_delta;
  }
  PhysicsConfig free_cfg = cfg;
  free_cfg.g = 0.0;

  const auto t_nb = simulate_nbody(base, cfg, steps, span, span);
  const auto t_nb2 = simulate_nbody(kicked, cfg, steps, span, span);
  const auto t_fr = simulate_nbody(base, free_cfg, steps, span, span);
  const auto t_fr2 = simulate_nbody(kicked, free_cfg, steps, span, span);

  auto divergence = [](const std::vector<Body>& a, const std::vector<Body>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i)
      s += std::hypot(a[i].x - b[i].x, a[i].y - b[i].y);
    return s / static_cast<double>(a.size());
  };
  ChaosReport rep;
  for (int64_t t = 0; t <= steps; ++t) {
    rep.div_nbody.push_back(divergence(t_nb[t], t_nb2[t]));
    rep.div_free.push_back(divergence(t_fr[t], t_fr2[t]));
  }

  std::vector<std::vector<uint8_t>> scaled;
  for (const auto& g : glyphs) scaled.push_back(resize_glyph(g, kGlyphSize, side));
  auto render_seq = [&](const std::vector<std::vector<Body>>& traj) {
    TensorT<float> out({steps + 1, size, size, 1});
    for (int64_t t = 0; t <= steps; ++t) {
      const auto px = render_frame(traj[size_t(t)], scaled, side, size);
      std::copy(px.begin(), px.end(), out.data() + t * size * size);
    }
    return out;
  };
  ChaosDemo demo;
  demo.nbody_base = render_seq(t_nb);
  demo.nbody_kick = render_seq(t_nb2);
  demo.free_base = render_seq(t_fr);
  demo.free_kick = render_seq(t_fr2);

  auto pixel_l2 = [&](const TensorT<float>& a, const TensorT<float>& b) {
    const int64_t fb = size * size;
    const float* fa = a.data() + steps * fb;
    const float* fbp = b.data() + steps * fb;
    double s = 0;
    for (int64_t i = 0; i < fb; ++i) {
      const double d = double(fa[i]) - double(fbp[i]);
      s += d * d;
    }
    return std::sqrt(s);
  };
  rep.pixel_l2_nbody = pixel_l2(demo.nbody_base, demo.nbody_kick);
  rep.pixel_l2_free = pixel_l2(demo.free_base, demo.free_kick);
  rep.ratio = rep.div_free.back() > 0 ? rep.div_nbody.back() / rep.div_free.back() : 0.0;
  demo.report = rep;
  return demo;
}

}  // namespace cubecast
