#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace ps::nn {

// Dense float tensor, row-major. Shapes are small fixed ranks (NCHW or NxD).
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  void reshape(std::vector<int> s) {
    if (numel_of(s) != numel()) throw std::invalid_argument("Tensor::reshape: numel mismatch");
    shape = std::move(s);
  }

  void zero() { std::fill(data.begin(), data.end(), 0.0f); }
};

}  // namespace ps::nn
