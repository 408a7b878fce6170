#pragma once

#include <filesystem>
#include <vector>

namespace tabrec {

/// Interleaved h x w x c image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 1.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int ch) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + ch]; }
  float at(int y, int x, int ch) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + ch]; }
  bool operator==(const Image&) const = default;
};

/// 8-bit PNG (gray for c == 1, RGB for c == 3). Throws FormatError on I/O failure.
void write_png(const std::filesystem::path& path, const Image& image);
/// Decodes any 8/16-bit PNG into an image with its native gray/RGB channel count
/// (alpha is dropped, palettes expanded).
Image read_png(const std::filesystem::path& path);

/// Bilinear, non-uniform resize to exactly h x w.
Image resize_bilinear(const Image& image, int height, int width);
/// Gray <-> RGB conversion (luma average for RGB -> gray).
Image convert_channels(const Image& image, int channels);
/// Resize and channel conversion as needed to match a model input.
Image conform(const Image& image, int height, int width, int channels);

}  // namespace tabrec
