#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "driftline/common.hpp"

namespace driftline::shift {

/// Row-major sample matrix: one row per event, one column per feature.
class Matrix {
 public:
  Matrix() = default;
  explicit Matrix(std::size_t cols) : cols_(cols) {}
  Matrix(std::size_t cols, std::vector<double> data) : cols_(cols), data_(std::move(data)) {
    if (cols_ == 0 || data_.size() % cols_ != 0) throw Error(Errc::kDomain, "matrix data does not fit column count");
  }

  std::size_t rows() const { return cols_ == 0 ? 0 : data_.size() / cols_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  void push_row(std::span<const double> r) {
    if (cols_ == 0) cols_ = r.size();
    if (r.size() != cols_) throw Error(Errc::kDomain, "row has wrong dimensionality");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  std::vector<double> column(std::size_t j) const {
    std::vector<double> out(rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = data_[i * cols_ + j];
    return out;
  }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Frozen reference sample S and sliding test sample T. Labels are class
/// indices (true labels or predicted classes), possibly empty.
struct WindowPair {
  Matrix reference;
  Matrix test;
  std::vector<int> reference_labels;
  std::vector<int> test_labels;
  std::uint64_t reference_id = 0;
  std::uint64_t test_id = 0;

  std::size_t feature_dims() const { return reference.cols(); }
};

}  // namespace driftline::shift
