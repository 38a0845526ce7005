#include "cubecast/glyphs.hpp"

#include <stdexcept>

namespace cubecast {

namespace {

enum Seg { A = 1, B = 2, C = 4, D = 8, E = 16, F = 32, G = 64 };

constexpr int kSegmentsOf[10] = {
    A | B | C | D | E | F,      // 0
    B | C,                      // 1
    A | B | G | E | D,          // 2
    A | B | G | C | D,          // 3
    F | G | B | C,              // 4
    A | F | G | C | D,          // 5
    A | F | G | E | D | C,      // 6
    A | B | C,                  // 7
    A | B | C | D | E | F | G,  // 8
    A | B | C | D | F | G,      // 9
};

void fill(std::vector<uint8_t>& img, int r0, int r1, int c0, int c1) {
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) img[r * kGlyphSize + c] = 255;
}

std::vector<uint8_t> draw_digit(int d) {
  std::vector<uint8_t> img(kGlyphSize * kGlyphSize, 0);
  const int mask = kSegmentsOf[d];
  if (mask & A) fill(img, 3, 5, 6, 21);
  if (mask & G) fill(img, 12, 14, 6, 21);
  if (mask & D) fill(img, 22, 24, 6, 21);
  if (mask & F) fill(img, 3, 14, 6, 8);
  if (mask & B) fill(img, 3, 14, 19, 21);
  if (mask & E) fill(img, 12, 24, 6, 8);
  if (mask & C) fill(img, 12, 24, 19, 21);
  return img;
}

}  // namespace

const std::vector<std::vector<uint8_t>>& procedural_glyphs() {
  static const std::vector<std::vector<uint8_t>> glyphs = [] {
    std::vector<std::vector<uint8_t>> g;
    for (int d = 0; d < 10; ++d) g.push_back(draw_digit(d));
    return g;
  }();
  return glyphs;
}

std::vector<uint8_t> resize_glyph(const std::vector<uint8_t>& src, int64_t src_size,
                                  int64_t dst_size) {
  if (src_size < 1 || dst_size < 1 ||
      static_cast<int64_t>(src.size()) != src_size * src_size)
    throw std::runtime_error("resize_glyph: bad sizes");
  if (dst_size == src_size) return src;
  std::vector<uint8_t> out(static_cast<size_t>(dst_size * dst_size));
  for (int64_t r = 0; r < dst_size; ++r)
    for (int64_t c = 0; c < dst_size; ++c)
      out[r * dst_size + c] = src[(r * src_size / dst_size) * src_size + c * src_size / dst_size];
  return out;
}

}  // namespace cubecast
