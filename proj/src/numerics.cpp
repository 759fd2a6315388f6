// src/numerics.cpp

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

#include "milpool/numerics.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Core>

namespace milpool {

uint64_t mix_seed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(uint64_t seed) : seed_(seed), engine_(mix_seed(seed)) {}

Rng Rng::substream(uint64_t seed, std::initializer_list<uint64_t> ids) {
  uint64_t s = mix_seed(seed);
  for (uint64_t id : ids) s = mix_seed(s ^ mix_seed(id + 0x632be59bd9b4e019ULL));
  return Rng(s);
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

uint64_t Rng::uniform_int(uint64_t n) {
  if (n == 0) throw Error("uniform_int: empty range");
  // Rejection sampling keeps the draw unbiased.
  const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::gaussian(double mean, double stddev) {
  if (stddev < 0.0) throw Error("gaussian: negative standard deviation");
  // Marsaglia polar method; each accepted pair yields two normals.
  double z;
  if (has_spare_) {
    z = spare_;
    has_spare_ = false;
  } else {
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    z = u * f;
    spare_ = v * f;
    has_spare_ = true;
  }
  if (stddev == 0.0) return mean;
  return mean + stddev * z;
}

int Rng::poisson(double rate) {
  if (rate < 0.0) throw Error("poisson: negative rate");
  const double limit = std::exp(-rate);
  int k = 0;
  double p = uniform();
  while (p > limit) {
    ++k;
    p *= uniform();
  }
  return k;
}

double gaussian(Rng& rng, double mean, double stddev) { return rng.gaussian(mean, stddev); }

Matrix::Matrix(size_t rows, size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(size_t rows, size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw Error("Matrix: data length does not match shape");
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  size_t r = rows.size();
  size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw Error("Matrix::from_rows: ragged rows");
    size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

std::vector<double> Matrix::col(size_t c) const {
  std::vector<double> out(rows_);
  for (size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::set_col(size_t c, std::span<const double> values) {
  if (values.size() != rows_) throw Error("Matrix::set_col: length mismatch");
  for (size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Matrix::check_finite(const char* what) const {
  if (!all_finite()) throw NumericalError(std::string("non-finite values in ") + what);
}

Matrix Matrix::transpose() const {
  Matrix out(cols_, rows_);
  for (size_t r = 0; r < rows_; ++r)
    for (size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMajor>;
using View = Eigen::Map<RowMajor>;

ConstView view(const Matrix& m) { return ConstView(m.data(), m.rows(), m.cols()); }
View view(Matrix& m) { return View(m.data(), m.rows(), m.cols()); }

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error("matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  if (a.cols() == 0) return out;
  view(out).noalias() = view(a) * view(b);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw Error("matmul_tn: inner dimensions differ");
  Matrix out(a.cols(), b.cols());
  if (a.rows() == 0) return out;
  view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error("matmul_nt: inner dimensions differ");
  Matrix out(a.rows(), b.rows());
  if (a.cols() == 0) return out;
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  add_in_place(out, b);
  return out;
}

void add_in_place(Matrix& a, const Matrix& b, double scale) {
  if (!a.same_shape(b)) throw Error("add: shape mismatch");
  auto dst = a.values();
  auto src = b.values();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw Error("hadamard: shape mismatch");
  Matrix out(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> x,
                                         double h) {
  if (!(h > 0.0)) throw Error("finite_diff_gradient: step must be positive");
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + h;
    double up = f(point);
    point[i] = orig - h;
    double down = f(point);
    point[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericalError("finite_diff_gradient: non-finite function value at coordinate " +
                           std::to_string(i));
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(double a, double b, double floor) {
  double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

}  // namespace milpool
