#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ps {

// Interleaved 8-bit RGB image, row-major.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;  // height * width * 3

  ImageU8() = default;
  ImageU8(int w, int h, uint8_t fill = 0) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, fill) {}

  uint8_t* px(int x, int y) { return data.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const uint8_t* px(int x, int y) const { return data.data() + (static_cast<size_t>(y) * width + x) * 3; }
  bool empty() const { return data.empty(); }
};

// PNG/JPEG via system codecs. Throws std::runtime_error naming the path on failure.
ImageU8 load_image(const std::string& path);
void save_image(const std::string& path, const ImageU8& img);

// Bilinear resampling (align_corners = false convention). Used both for the
// width-256 dataset normalization and for the 32x32 patch standardization.
ImageU8 resize_bilinear(const ImageU8& src, int out_w, int out_h);

ImageU8 crop(const ImageU8& src, int x, int y, int w, int h);

// 2px rectangle outline, clipped at borders.
void draw_rect(ImageU8& img, int x, int y, int w, int h, uint8_t r, uint8_t g, uint8_t b, int thickness = 2);

}  // namespace ps
