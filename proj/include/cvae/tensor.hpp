#ifndef CVAE_TENSOR_HPP
#define CVAE_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace cvae {

/// Dense row-major float64 matrix.
///
/// Constructors that take external data reject NaN and Inf entries. Element
/// access through the mutable accessors is unchecked.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool all_finite() const;

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Selects the given rows, in order.
Tensor2 gather_rows(const Tensor2& src, std::span<const std::size_t> indices);

/// Dot product with a fixed four-lane accumulation order. Every inner product
/// in the library goes through here so that different call paths agree bit
/// for bit.
double dot(std::span<const double> a, std::span<const double> b);

/// Numerically stable log(sum(exp(values))).
double log_sum_exp(std::span<const double> values);

/// Numerically stable log(sum(weights[i] * exp(values[i]))). Zero weights
/// contribute nothing; returns -inf when every weight is zero.
double log_sum_exp_weighted(std::span<const double> values, std::span<const double> weights);

/// log(1 + exp(x)) without overflow.
double softplus(double x);
double sigmoid(double x);

}  // namespace cvae

#endif  // CVAE_TENSOR_HPP
