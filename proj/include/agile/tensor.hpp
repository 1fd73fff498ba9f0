#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace agile {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid run configuration or operation parameters.
struct ConfigError : Error {
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
struct DomainError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

// A required input file or stage output does not exist.
struct MissingArtifactError : Error {
  using Error::Error;
};

// Non-finite values appeared during optimization or training.
struct NumericError : Error {
  using Error::Error;
};

std::string shape_string(const std::vector<int>& shape);

// Dense row-major tensor of doubles. Images and latents are {C, H, W}.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0)
      : shape(std::move(s)), data(count(shape), fill) {}
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) {
      throw ShapeError("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                       shape_string(shape));
    }
  }

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  bool empty() const { return data.empty(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // 3-D accessors for {C, H, W} tensors.
  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  // Exact elementwise equality.
  bool operator==(const Tensor&) const = default;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                     shape_string(b.shape));
  }
}

bool all_finite(const Tensor& t);

}  // namespace agile
