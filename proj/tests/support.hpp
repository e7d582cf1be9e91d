// Shared generators and finite-difference oracles for the test suites.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rgem/rgem.hpp"

namespace rgem::testing {

/// Small-instance generator on top of the library RNG.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed, Stream::data) {}

  std::size_t size(std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng_.below(hi - lo + 1)); }
  double real(double lo, double hi) { return lo + (hi - lo) * rng_.uniform(); }
  double normal(double std) { return std * rng_.normal(); }

  std::vector<WordId> ids(std::size_t n, std::size_t vocab) {
    std::vector<WordId> v(n);
    for (auto& x : v) x = static_cast<WordId>(rng_.below(vocab));
    return v;
  }
  template <typename T>
  Matrix<T> matrix(std::size_t r, std::size_t c, double std) {
    Matrix<T> m(r, c);
    for (auto& x : m.data()) x = static_cast<T>(normal(std));
    return m;
  }
  template <typename T>
  Vec<T> vec(std::size_t n, double std) {
    Vec<T> v(n);
    for (auto& x : v) x = static_cast<T>(normal(std));
    return v;
  }
  SparseVector sparse(std::size_t dim, std::size_t max_nnz) {
    std::vector<std::uint32_t> idx;
    const auto n = size(0, max_nnz);
    for (std::size_t i = 0; i < n; ++i) idx.push_back(static_cast<std::uint32_t>(rng_.below(dim)));
    auto s = sparse_from_counts(dim, idx);
    for (auto& e : s.entries) e.value = normal(1.0);
    return s;
  }
  Rng& rng() { return rng_; }

 private:
  Rng rng_;
};

template <typename T>
void randomize(LstmParams<T>& p, Gen& g, double std) {
  visit_lstm(p, "", [&](auto t) {
    for (auto& x : t.data) x = static_cast<T>(g.normal(std));
  });
}

template <typename T>
void randomize(ConvParams<T>& p, Gen& g, double std) {
  visit_conv(p, "", [&](auto t) {
    for (auto& x : t.data) x = static_cast<T>(g.normal(std));
  });
}

template <typename T>
void randomize(Model<T>& m, Gen& g, double std) {
  visit_model(m, [&](auto t) {
    for (auto& x : t.data) x = static_cast<T>(g.normal(std));
  }, true);
}

/// Central difference of f around every coordinate of `data`; returns the
/// largest relative error against `analytic`.
inline double fd_max_rel_err(std::span<double> data, std::span<const double> analytic,
                             const std::function<double()>& f, double eps = 1e-4) {
  double worst = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + eps;
    const double lp = f();
    data[i] = orig - eps;
    const double lm = f();
    data[i] = orig;
    const double num = (lp - lm) / (2 * eps);
    const double a = analytic[i];
    worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8}));
  }
  return worst;
}

/// Σ U ⊙ H: a linear probe loss whose gradient wrt H is U.
inline double probe(const Matrix<double>& H, const Matrix<double>& U) {
  double s = 0;
  for (std::size_t i = 0; i < H.size(); ++i) s += H.data()[i] * U.data()[i];
  return s;
}

inline double max_rel_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 1e-300}));
  return worst;
}

inline TokenSequence doc(std::vector<WordId> ids, std::optional<std::uint32_t> label = std::nullopt) {
  TokenSequence d;
  d.raw_len = ids.size();
  d.ids = std::move(ids);
  d.label = label;
  return d;
}

}  // namespace rgem::testing

namespace rgem::testing {

enum class Arch { conv_seq, conv_bow, lstm_simplified, lstm_full, bilstm, lstm_backward, wv_lstm };

/// Small random model for gradient and round-trip tests. Pool k and kind vary with the seed.
template <typename T>
Model<T> random_model(Arch arch, std::uint64_t seed, std::size_t vocab, std::size_t n_classes, double std = 0.5) {
  Rng rng(seed);
  Gen g(seed);
  Model<T> m;
  PoolingSpec pool{seed % 2 ? PoolKind::max : PoolKind::avg, g.size(1, 3)};
  const auto units = g.size(1, 4);
  switch (arch) {
    case Arch::conv_seq:
    case Arch::conv_bow:
      m.branches.push_back(make_conv_branch<T>(units, g.size(1, 3), arch == Arch::conv_seq ? RegionInput::seq : RegionInput::bow,
                                               vocab, pool, std, rng));
      break;
    case Arch::lstm_simplified:
      m.branches.push_back(make_lstm_branch<T>(BranchKind::lstm_forward, LstmVariant::simplified, units, vocab, pool, std, rng));
      break;
    case Arch::lstm_full:
      m.branches.push_back(make_lstm_branch<T>(BranchKind::lstm_forward, LstmVariant::full, units, vocab, pool, std, rng));
      break;
    case Arch::bilstm:
      m.branches.push_back(make_lstm_branch<T>(BranchKind::bilstm, LstmVariant::simplified, units, vocab, pool, std, rng));
      break;
    case Arch::lstm_backward:
      m.branches.push_back(make_lstm_branch<T>(BranchKind::lstm_backward, LstmVariant::full, units, vocab, pool, std, rng));
      break;
    case Arch::wv_lstm:
      m.branches.push_back(make_lstm_branch<T>(BranchKind::lstm_forward, LstmVariant::full, units, vocab, pool, std, rng,
                                               gaussian_init<T>(g.size(1, 3), vocab, 1.0, rng)));
      break;
  }
  init_top(m, n_classes, 0.0, std, rng);
  // nonzero biases so every parameter is exercised
  visit_model(m, [&](auto t) {
    if (t.cols == 1)
      for (auto& x : t.data) x = static_cast<T>(g.normal(std));
  });
  return m;
}

template <typename T>
std::shared_ptr<const TvEmbedding<T>> random_tv(TvKind kind, std::uint64_t seed, std::size_t vocab, std::string id,
                                                double std = 0.5) {
  Rng rng(seed);
  Gen g(seed);
  TvEmbedding<T> e;
  e.id = std::move(id);
  e.kind = kind;
  e.dim = g.size(1, 3);
  e.k_next = 2;
  if (kind == TvKind::lstm) {
    e.direction = seed % 2 ? Direction::forward : Direction::backward;
    e.lstm = LstmParams<T>::random(LstmVariant::full, e.dim, vocab, InputKind::one_hot, std, rng);
  } else {
    e.region_size = g.size(1, 4);
    e.align_offset = center_offset(e.region_size);
    e.conv = ConvParams<T>::random(e.dim, e.region_size, seed % 2 ? RegionInput::seq : RegionInput::bow, vocab, std, rng);
  }
  return std::make_shared<const TvEmbedding<T>>(std::move(e));
}

}  // namespace rgem::testing
