// Dense and sparse numeric primitives shared by every layer.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rgem {

/// Violated precondition (shape mismatch, index out of range, bad argument).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data (files, labels, encodings).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Divergence or failed numerical verification.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

template <typename T>
using Vec = std::vector<T>;

/// Row-major dense matrix.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, "Matrix: data length != rows*cols");
  }
  /// Builds from nested rows; handy in tests.
  Matrix(std::initializer_list<std::initializer_list<T>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : init) {
      require(r.size() == cols_, "Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  T* row(std::size_t r) noexcept { return data_.data() + r * cols_; }
  const T* row(std::size_t r) const noexcept { return data_.data() + r * cols_; }

  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  Vec<T> col(std::size_t c) const {
    Vec<T> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }
  void set_col(std::size_t c, std::span<const T> v) {
    require(v.size() == rows_, "Matrix::set_col: length mismatch");
    for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
  }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

struct SparseEntry {
  std::uint32_t index;
  double value;
  friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

/// Sparse vector: indices strictly increasing, all < dim, no stored zeros.
struct SparseVector {
  std::size_t dim = 0;
  std::vector<SparseEntry> entries;

  std::size_t nnz() const noexcept { return entries.size(); }
  bool valid() const noexcept {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].index >= dim || entries[i].value == 0.0) return false;
      if (i > 0 && entries[i - 1].index >= entries[i].index) return false;
    }
    return true;
  }
  friend bool operator==(const SparseVector&, const SparseVector&) = default;
};

/// Builds a valid sparse vector from unsorted (index, count) contributions.
inline SparseVector sparse_from_counts(std::size_t dim, std::vector<std::uint32_t> idx) {
  std::sort(idx.begin(), idx.end());
  SparseVector s{dim, {}};
  for (std::size_t i = 0; i < idx.size();) {
    require(idx[i] < dim, "sparse_from_counts: index out of range");
    std::size_t j = i;
    while (j < idx.size() && idx[j] == idx[i]) ++j;
    s.entries.push_back({idx[i], static_cast<double>(j - i)});
    i = j;
  }
  return s;
}

template <typename T>
Vec<T> densify(const SparseVector& s) {
  Vec<T> out(s.dim, T(0));
  for (const auto& e : s.entries) out[e.index] = static_cast<T>(e.value);
  return out;
}

// ---------------------------------------------------------------------------
// Affine maps

/// W·s + b, summing value-scaled columns of W at the indices of s.
template <typename T>
Vec<T> affine_sparse(const Matrix<T>& W, std::span<const T> b, const SparseVector& s) {
  require(W.cols() == s.dim, "affine_sparse: W.cols != s.dim");
  require(W.rows() == b.size(), "affine_sparse: W.rows != b.dim");
  Vec<T> out(b.begin(), b.end());
  for (const auto& e : s.entries) {
    const T v = static_cast<T>(e.value);
    for (std::size_t r = 0; r < W.rows(); ++r) out[r] += v * W(r, e.index);
  }
  return out;
}

template <typename T>
Vec<T> affine_dense(const Matrix<T>& W, std::span<const T> b, std::span<const T> v) {
  require(W.cols() == v.size(), "affine_dense: W.cols != v.dim");
  require(W.rows() == b.size(), "affine_dense: W.rows != b.dim");
  Vec<T> out(W.rows());
  for (std::size_t r = 0; r < W.rows(); ++r) {
    const T* w = W.row(r);
    T acc = b[r];
    for (std::size_t c = 0; c < W.cols(); ++c) acc += w[c] * v[c];
    out[r] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Element-wise functions

template <typename T>
inline T sigmoid(T x) noexcept {
  return T(1) / (T(1) + std::exp(-x));
}

enum class Elementwise { sigmoid, tanh, relu, hadamard, add };

template <typename T>
Vec<T> elementwise(Elementwise kind, std::span<const T> a, std::span<const T> b = {}) {
  Vec<T> out(a.size());
  switch (kind) {
    case Elementwise::sigmoid:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = sigmoid(a[i]);
      break;
    case Elementwise::tanh:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a[i]);
      break;
    case Elementwise::relu:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
      break;
    case Elementwise::hadamard:
      require(a.size() == b.size(), "elementwise(hadamard): dimension mismatch");
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
      break;
    case Elementwise::add:
      require(a.size() == b.size(), "elementwise(add): dimension mismatch");
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random numbers
//
// Raw bits come from std::mt19937_64, whose output sequence is fixed by the
// C++ standard. Uniform and normal variates are derived here rather than via
// <random> distributions (those are implementation-defined), so a seed gives
// the same stream on every toolchain. Each purpose gets its own stream whose
// seed is splitmix64(seed ^ purpose-tag).

enum class Stream : std::uint64_t {
  init = 0x696e6974ULL,
  dropout = 0x64726f70ULL,
  sampling = 0x73616d70ULL,
  shuffle = 0x73687566ULL,
  data = 0x64617461ULL,
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct RngSpec {
  std::uint64_t seed = 0;
  static constexpr const char* algorithm = "mt19937_64+splitmix64-streams";
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed, Stream stream = Stream::init)
      : engine_(splitmix64(seed ^ static_cast<std::uint64_t>(stream))) {}
  explicit Rng(RngSpec spec, Stream stream = Stream::init) : Rng(spec.seed, stream) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) {
    require(n > 0, "Rng::below: n must be positive");
    const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename Container>
  void shuffle(Container& c) {
    for (std::size_t i = c.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(c[i - 1], c[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename T>
void gaussian_fill(std::span<T> out, double stddev, Rng& rng) {
  require(stddev > 0, "gaussian_init: std must be positive");
  for (auto& x : out) x = static_cast<T>(stddev * rng.normal());
}

template <typename T>
Matrix<T> gaussian_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix<T> m(rows, cols);
  gaussian_fill<T>(m.span(), stddev, rng);
  return m;
}

template <typename T>
Matrix<T> gaussian_init(std::size_t rows, std::size_t cols, double stddev, RngSpec spec) {
  Rng rng(spec, Stream::init);
  return gaussian_init<T>(rows, cols, stddev, rng);
}

// ---------------------------------------------------------------------------
// Small helpers used by the layer code

template <typename T>
bool all_finite(std::span<const T> v) noexcept {
  for (T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

template <typename T>
void axpy(T a, std::span<const T> x, std::span<T> y) noexcept {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

template <typename T>
Matrix<T> zeros_like(const Matrix<T>& m) {
  return Matrix<T>(m.rows(), m.cols());
}

template <typename To, typename From>
Matrix<To> cast_matrix(const Matrix<From>& m) {
  std::vector<To> d(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) d[i] = static_cast<To>(m.data()[i]);
  return Matrix<To>(m.rows(), m.cols(), std::move(d));
}

}  // namespace rgem
