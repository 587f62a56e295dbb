#pragma once

#include <algorithm>
#include <stdexcept>

namespace ps {

// Axis-aligned box, pixel coordinates, (x, y) top-left.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  double x2() const { return x + w; }
  double y2() const { return y + h; }
};

inline double intersection_area(const Box& a, const Box& b) {
  const double ix = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
  const double iy = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  return ix * iy;
}

inline double iou(const Box& a, const Box& b) {
  if (a.area() <= 0.0 || b.area() <= 0.0)
    throw std::invalid_argument("iou: zero-area box");
  const double inter = intersection_area(a, b);
  return inter / (a.area() + b.area() - inter);
}

}  // namespace ps
