#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecmvae {

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

// Dense row-major double tensor. Plain value type; all the math lives in
// free functions or on the autodiff tape.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shp, double fill = 0.0)
      : shape(std::move(shp)), data(size_t(shape_numel(shape)), fill) {}

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }
  static Tensor from(std::vector<int64_t> shp, std::vector<double> d) {
    Tensor t;
    t.shape = std::move(shp);
    t.data = std::move(d);
    if (shape_numel(t.shape) != int64_t(t.data.size()))
      throw std::invalid_argument("Tensor::from: shape/data size mismatch");
    return t;
  }

  int64_t numel() const { return int64_t(data.size()); }
  int ndim() const { return int(shape.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool defined() const { return !shape.empty(); }

  double& operator[](int64_t i) { return data[size_t(i)]; }
  double operator[](int64_t i) const { return data[size_t(i)]; }

  // 2-d/4-d accessors for readability in slow paths and tests
  double& at2(int64_t i, int64_t j) { return data[size_t(i * shape[1] + j)]; }
  double at2(int64_t i, int64_t j) const { return data[size_t(i * shape[1] + j)]; }
  double& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data[size_t(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  double at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data[size_t(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) {
    for (auto& x : data) x = v;
  }
  void add_scaled(const Tensor& o, double s) {
    for (size_t i = 0; i < data.size(); ++i) data[i] += s * o.data[i];
  }
};

inline bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape && a.data == b.data;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

}  // namespace ecmvae
