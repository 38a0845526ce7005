#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "cubecast/nbody.hpp"
#include "cubecast/tensor.hpp"

namespace cubecast {

// Decoded IDX image file (big-endian standard container).
struct IdxImages {
  int64_t n = 0, rows = 0, cols = 0;
  std::vector<uint8_t> data;  // n*rows*cols bytes, row-major per image
};

IdxImages parse_idx(const std::vector<uint8_t>& bytes);
IdxImages load_idx_file(const std::string& path);
// One glyph vector per image, each rows*cols bytes.
std::vector<std::vector<uint8_t>> glyphs_from_idx(const IdxImages& im);

// Generation request: n_samples sequences of t_in+t_out square frames.
struct DatasetSpec {
  int64_t n_samples = 100;
  int64_t t_in = 10, t_out = 10;
  int64_t size = 64;
  uint64_t seed = 0;
  PhysicsConfig physics;
};

// Generated sequences, frames in [0,1]; data is [N, t_in+t_out, H, W, 1].
// Regenerating with the same spec is bit-identical, and each sample depends
// only on (seed, sample index), not on generation order.
struct SequenceDataset {
  std::string kind = "nbody";
  std::string dtype = "u8";  // payload dtype when written: "u8" or "f32"
  int64_t t_in = 10, t_out = 10;
  uint64_t seed = 0;
  PhysicsConfig physics;
  TensorT<float> data;
};

// Digits fall under mutual softened gravity (walls reflect); glyphs are
// square sprites of one common side length, scaled to the frame so a 64 px
// frame carries 28 px digits. Rendering rounds positions to whole pixels and
// composes overlaps with max.
// Samples are seeded independently, so the result is bit-identical for any
// thread count.
SequenceDataset gen_nbody_mnist(const DatasetSpec& spec,
                                const std::vector<std::vector<uint8_t>>& glyphs,
                                int threads = 1);
// The classic two-digit bouncing special case: same generator pinned to
// G=0, two bodies.
SequenceDataset gen_moving_mnist(const DatasetSpec& spec,
                                 const std::vector<std::vector<uint8_t>>& glyphs,
                                 int threads = 1);

// Renders one frame of bodies into [size,size] floats (max composition).
std::vector<float> render_frame(const std::vector<Body>& bodies,
                                const std::vector<std::vector<uint8_t>>& glyphs,
                                int64_t glyph_side, int64_t size);

// Container: one UTF-8 JSON header line (magic "STDS1", dtype, shape,
// split, seed, physics config) then the raw little-endian payload. u8
// payloads store round(v*255) and load as value/255.
void write_dataset(const SequenceDataset& ds, const std::string& path);
SequenceDataset read_dataset(const std::string& path);

// Two simulations from identical seeded starts, one with velocities scaled
// by (1+velocity_delta), for the configured gravity and for G=0; divergence
// is the mean over bodies of the position distance at each frame.
struct ChaosReport {
  std::vector<double> div_nbody, div_free;
  double pixel_l2_nbody = 0, pixel_l2_free = 0;  // final-frame L2 distances
  double ratio = 0;  // final div_nbody / div_free, 0 when both runs agree
};

ChaosReport chaos_probe(const PhysicsConfig& cfg, double velocity_delta, uint64_t seed,
                        int64_t steps, int64_t size = 64);

// The probe plus the four rendered sequences behind it, each
// [steps+1, size, size, 1]: base and kicked starts under the configured
// gravity and under G=0.
struct ChaosDemo {
  TensorT<float> nbody_base, nbody_kick, free_base, free_kick;
  ChaosReport report;
};

ChaosDemo chaos_demo(const PhysicsConfig& cfg, double velocity_delta, uint64_t seed,
                     int64_t steps, int64_t size = 64);

}  // namespace cubecast
