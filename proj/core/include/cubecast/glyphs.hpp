#pragma once
#include <cstdint>
#include <vector>

namespace cubecast {

constexpr int64_t kGlyphSize = 28;

// Ten bundled 28x28 digit sprites (seven-segment strokes, values 0 or 255)
// so generation and tests never need an external digit file.
const std::vector<std::vector<uint8_t>>& procedural_glyphs();

// Nearest-neighbor resample of a square glyph to a new side length.
std::vector<uint8_t> resize_glyph(const std::vector<uint8_t>& src, int64_t src_size,
                                  int64_t dst_size);

}  // namespace cubecast
