#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace tabrec {

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
inline constexpr int kGlyphAdvance = 6;  // glyph width plus one column of spacing

/// Seven rows, top to bottom; bit 4 is the leftmost column.
using Glyph = std::array<std::uint8_t, kGlyphHeight>;

/// Characters the built-in font can draw: digits, Latin letters, space and `.,-%()`.
std::string_view font_alphabet();
bool has_glyph(char c);
/// Throws std::out_of_range for characters outside font_alphabet().
const Glyph& glyph(char c);

}  // namespace tabrec
