// include/milpool/numerics.hpp

// Copyright 2026  milpool authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef MILPOOL_NUMERICS_HPP_
#define MILPOOL_NUMERICS_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace milpool {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad files, bad configs, checksum and version problems.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Deterministic random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Distributions are implemented here rather than taken from
/// <random> because the standard distributions are implementation-defined
/// and would break cross-platform reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  /// Independent stream keyed by (seed, ids...). Streams with different id
  /// paths never share state, so call order between them is irrelevant.
  static Rng substream(uint64_t seed, std::initializer_list<uint64_t> ids);

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer on [0, n).
  uint64_t uniform_int(uint64_t n);
  double gaussian(double mean, double stddev);
  /// Knuth's multiplication method; fine for the small rates used here.
  int poisson(double rate);

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
  // Second normal of the last polar-method pair.
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// SplitMix64 finalizer, used to derive substream seeds.
uint64_t mix_seed(uint64_t x);

double gaussian(Rng& rng, double mean, double stddev);

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(size_t rows, size_t cols, double fill = 0.0);
  Matrix(size_t rows, size_t cols, std::vector<double> data);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double> col(size_t c) const;
  void set_col(size_t c, std::span<const double> values);

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v);
  bool all_finite() const;
  /// Throws NumericalError naming `what` if any entry is NaN/Inf.
  void check_finite(const char* what) const;
  Matrix transpose() const;
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<double> data_;
};

/// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
void add_in_place(Matrix& a, const Matrix& b, double scale = 1.0);

template <class Fn>
Matrix map_values(const Matrix& m, Fn&& fn) {
  Matrix out(m.rows(), m.cols());
  auto src = m.values();
  auto dst = out.values();
  for (size_t i = 0; i < src.size(); ++i) dst[i] = fn(src[i]);
  return out;
}

double sigmoid(double z);

using ScalarFunction = std::function<double(std::span<const double>)>;

inline constexpr double kDefaultFiniteDiffStep = 1e-5;

/// Central-difference gradient of f at x.
std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> x,
                                         double h = kDefaultFiniteDiffStep);

/// |a-b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
/// producing huge relative errors out of round-off.
double relative_error(double a, double b, double floor = 1e-6);

}  // namespace milpool

#endif  // MILPOOL_NUMERICS_HPP_
