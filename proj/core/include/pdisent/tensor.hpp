#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace pdisent {

/// 64-byte aligned storage, so vectorized reductions over parameter buffers do
/// not depend on where the heap placed them.
using AlignedDoubles = std::vector<double, Eigen::aligned_allocator<double>>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Named dense tensor of doubles, row-major.
struct Tensor {
  std::string name;
  std::vector<int> shape;
  AlignedDoubles data;

  Tensor() = default;
  Tensor(std::string n, std::vector<int> s)
      : name(std::move(n)), shape(std::move(s)), data(element_count(shape), 0.0) {}

  static std::size_t element_count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  }

  std::size_t size() const { return data.size(); }
  int rows() const { return shape.empty() ? 1 : shape.front(); }
  int cols() const { return static_cast<int>(size() / static_cast<std::size_t>(rows())); }

  /// Views the tensor as rows() x cols() (first dimension by the rest).
  Eigen::Map<RowMatrix> matrix() { return {data.data(), rows(), cols()}; }
  Eigen::Map<const RowMatrix> matrix() const { return {data.data(), rows(), cols()}; }

  Eigen::Map<Eigen::VectorXd> vector() { return {data.data(), static_cast<Eigen::Index>(size())}; }
  Eigen::Map<const Eigen::VectorXd> vector() const {
    return {data.data(), static_cast<Eigen::Index>(size())};
  }

  bool operator==(const Tensor&) const = default;
};

}  // namespace pdisent
