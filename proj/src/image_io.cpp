#include "tabrec/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tabrec/errors.hpp"

namespace tabrec {
namespace {

[[noreturn]] void png_fail(const std::filesystem::path& path, const char* what) {
  throw FormatError("png " + path.string() + ": " + what);
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) png_fail(path, "only 1 or 3 channels are supported");
  std::vector<png_byte> buffer(image.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    buffer[i] = static_cast<png_byte>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    png_fail(path, message.c_str());
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    const std::string message = png.message;
    png_image_free(&png);
    png_fail(path, message.c_str());
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int h = static_cast<int>(png.height);
  const int w = static_cast<int>(png.width);
  const int c = color ? 3 : 1;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    png_fail(path, message.c_str());
  }
  Image image(h, w, c);
  for (std::size_t i = 0; i < buffer.size(); ++i) image.pixels[i] = static_cast<float>(buffer[i]) / 255.0f;
  return image;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  Image out(height, width, image.channels);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Image convert_channels(const Image& image, int channels) {
  if (image.channels == channels) return image;
  if ((image.channels != 1 && image.channels != 3) || (channels != 1 && channels != 3)) {
    throw FormatError("unsupported channel conversion " + std::to_string(image.channels) + " -> " +
                      std::to_string(channels));
  }
  Image out(image.height, image.width, channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (channels == 1) {
        out.at(y, x, 0) = (image.at(y, x, 0) + image.at(y, x, 1) + image.at(y, x, 2)) / 3.0f;
      } else {
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, x, 0);
      }
    }
  }
  return out;
}

Image conform(const Image& image, int height, int width, int channels) {
  return resize_bilinear(convert_channels(image, channels), height, width);
}

}  // namespace tabrec
