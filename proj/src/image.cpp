#include "patternspace/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ps {

ImageU8 load_image(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);  // BGR
  if (m.empty()) throw std::runtime_error("load_image: cannot read '" + path + "'");
  ImageU8 out(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    const uint8_t* row = m.ptr<uint8_t>(y);
    uint8_t* dst = out.px(0, y);
    for (int x = 0; x < m.cols; ++x) {
      dst[3 * x + 0] = row[3 * x + 2];
      dst[3 * x + 1] = row[3 * x + 1];
      dst[3 * x + 2] = row[3 * x + 0];
    }
  }
  return out;
}

void save_image(const std::string& path, const ImageU8& img) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    uint8_t* row = m.ptr<uint8_t>(y);
    const uint8_t* src = img.px(0, y);
    for (int x = 0; x < img.width; ++x) {
      row[3 * x + 0] = src[3 * x + 2];
      row[3 * x + 1] = src[3 * x + 1];
      row[3 * x + 2] = src[3 * x + 0];
    }
  }
  if (!cv::imwrite(path, m)) throw std::runtime_error("save_image: cannot write '" + path + "'");
}

ImageU8 resize_bilinear(const ImageU8& src, int out_w, int out_h) {
  if (src.empty() || out_w < 1 || out_h < 1)
    throw std::invalid_argument("resize_bilinear: bad dimensions");
  if (out_w == src.width && out_h == src.height) return src;

  ImageU8 out(out_w, out_h);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const uint8_t* p00 = src.px(x0, y0);
      const uint8_t* p10 = src.px(x1, y0);
      const uint8_t* p01 = src.px(x0, y1);
      const uint8_t* p11 = src.px(x1, y1);
      uint8_t* dst = out.px(ox, oy);
      for (int c = 0; c < 3; ++c) {
        const double top = p00[c] + (p10[c] - p00[c]) * wx;
        const double bot = p01[c] + (p11[c] - p01[c]) * wx;
        dst[c] = static_cast<uint8_t>(std::lround(std::clamp(top + (bot - top) * wy, 0.0, 255.0)));
      }
    }
  }
  return out;
}

ImageU8 crop(const ImageU8& src, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || w < 1 || h < 1 || x + w > src.width || y + h > src.height)
    throw std::out_of_range("crop: region outside image");
  ImageU8 out(w, h);
  for (int row = 0; row < h; ++row)
    std::copy_n(src.px(x, y + row), static_cast<size_t>(w) * 3, out.px(0, row));
  return out;
}

void draw_rect(ImageU8& img, int x, int y, int w, int h, uint8_t r, uint8_t g, uint8_t b, int thickness) {
  auto put = [&](int px, int py) {
    if (px < 0 || py < 0 || px >= img.width || py >= img.height) return;
    uint8_t* p = img.px(px, py);
    p[0] = r; p[1] = g; p[2] = b;
  };
  for (int t = 0; t < thickness; ++t) {
    for (int i = x - t; i <= x + w - 1 + t; ++i) {
      put(i, y - t);
      put(i, y + h - 1 + t);
    }
    for (int j = y - t; j <= y + h - 1 + t; ++j) {
      put(x - t, j);
      put(x + w - 1 + t, j);
    }
  }
}

}  // namespace ps
