// One-hot CNN region embedding: relu(W x_l + sum_j S_j xs_j(l) + b) at every
// location l, where x_l is the concatenated one-hot (seq) or bag-of-words
// (bow) encoding of the window [l, l + region_size), zero-padded on the right.
#pragma once

#include <string>
#include <vector>

#include "rgem/corpus.hpp"
#include "rgem/numkernel.hpp"

namespace rgem {

enum class RegionInput { seq, bow };

inline const char* to_string(RegionInput k) { return k == RegionInput::seq ? "seq" : "bow"; }

template <typename T>
struct ConvSideParams {
  std::string tv_id;
  std::size_t dim = 0;
  Matrix<T> W;  // m x dim
  friend bool operator==(const ConvSideParams&, const ConvSideParams&) = default;
};

template <typename T>
struct ConvParams {
  std::size_t m = 0;  // feature maps
  std::size_t region_size = 1;
  RegionInput input_kind = RegionInput::seq;
  std::size_t vocab_size = 0;
  Matrix<T> W;  // m x (region_size*|V|) for seq, m x |V| for bow
  Vec<T> b;
  std::vector<ConvSideParams<T>> side;

  std::size_t input_dim() const noexcept {
    return input_kind == RegionInput::seq ? region_size * vocab_size : vocab_size;
  }

  static ConvParams zeros(std::size_t m, std::size_t region_size, RegionInput kind, std::size_t vocab_size) {
    require(region_size >= 1, "ConvParams: region_size must be >= 1");
    ConvParams p;
    p.m = m;
    p.region_size = region_size;
    p.input_kind = kind;
    p.vocab_size = vocab_size;
    p.W = Matrix<T>(m, p.input_dim());
    p.b = Vec<T>(m, T(0));
    return p;
  }

  static ConvParams random(std::size_t m, std::size_t region_size, RegionInput kind, std::size_t vocab_size,
                           double stddev, Rng& rng) {
    auto p = zeros(m, region_size, kind, vocab_size);
    gaussian_fill<T>(p.W.span(), stddev, rng);
    return p;
  }

  void add_side(std::string tv_id, std::size_t dim, double stddev, Rng& rng) {
    side.push_back({std::move(tv_id), dim, gaussian_init<T>(m, dim, stddev, rng)});
  }

  ConvParams zeros_like() const {
    auto p = zeros(m, region_size, input_kind, vocab_size);
    for (const auto& s : side) p.side.push_back({s.tv_id, s.dim, rgem::zeros_like(s.W)});
    return p;
  }

  void validate() const {
    require(W.rows() == m && W.cols() == input_dim(), "ConvParams: W shape");
    require(b.size() == m, "ConvParams: bias shape");
    for (const auto& s : side) require(s.W.rows() == m && s.W.cols() == s.dim, "ConvParams: side matrix shape");
  }

  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

namespace detail {
template <typename T>
void check_conv_input(const ConvParams<T>& p, std::span<const WordId> ids, std::span<const Matrix<T>* const> side) {
  p.validate();
  for (WordId id : ids) require(id < p.vocab_size, "conv: word id >= vocab size");
  require(side.size() == p.side.size(), "conv: side input count mismatch");
  for (std::size_t j = 0; j < side.size(); ++j) {
    require(side[j] != nullptr, "conv: null side input");
    require(side[j]->rows() == p.side[j].dim, "conv: side input dim mismatch");
    require(side[j]->cols() == ids.size(), "conv: side input length mismatch");
  }
}

/// Column of W touched by slot p of the window holding word `id`.
template <typename T>
std::size_t conv_col(const ConvParams<T>& p, std::size_t slot, WordId id) {
  return p.input_kind == RegionInput::seq ? slot * p.vocab_size + id : id;
}
}  // namespace detail

/// m x T matrix of region embeddings, one column per token position.
template <typename T>
Matrix<T> conv_forward(const ConvParams<T>& p, std::span<const WordId> ids,
                       std::span<const Matrix<T>* const> side = {}) {
  detail::check_conv_input(p, ids, side);
  const std::size_t T_ = ids.size();
  Matrix<T> out(p.m, T_);
  Vec<T> a(p.m);
  for (std::size_t l = 0; l < T_; ++l) {
    std::copy(p.b.begin(), p.b.end(), a.begin());
    for (std::size_t s = 0; s < p.region_size && l + s < T_; ++s) {
      const std::size_t c = detail::conv_col(p, s, ids[l + s]);
      for (std::size_t r = 0; r < p.m; ++r) a[r] += p.W(r, c);
    }
    for (std::size_t j = 0; j < side.size(); ++j) {
      const auto& S = p.side[j].W;
      const auto& X = *side[j];
      for (std::size_t r = 0; r < p.m; ++r) {
        T acc = T(0);
        for (std::size_t k = 0; k < S.cols(); ++k) acc += S(r, k) * X(k, l);
        a[r] += acc;
      }
    }
    for (std::size_t r = 0; r < p.m; ++r) out(r, l) = a[r] > T(0) ? a[r] : T(0);
  }
  return out;
}

template <typename T>
struct ConvGradients {
  ConvParams<T> params;
  std::vector<Matrix<T>> side;  // dL/d(side input j), dim_j x T
};

/// Adds dL/dparams into `grad` given the forward output and dL/dout.
/// Units whose pre-activation was <= 0 pass no gradient.
template <typename T>
void conv_backward(const ConvParams<T>& p, std::span<const WordId> ids, std::span<const Matrix<T>* const> side,
                   const Matrix<T>& out, const Matrix<T>& upstream, ConvParams<T>& grad,
                   std::vector<Matrix<T>>* side_grads = nullptr) {
  const std::size_t T_ = ids.size();
  require(upstream.rows() == p.m && upstream.cols() == T_, "conv_backward: upstream shape mismatch");
  require(out.rows() == p.m && out.cols() == T_, "conv_backward: forward output shape mismatch");
  if (side_grads) {
    side_grads->clear();
    for (const auto& s : p.side) side_grads->emplace_back(s.dim, T_);
  }
  Vec<T> d(p.m);
  for (std::size_t l = 0; l < T_; ++l) {
    bool any = false;
    for (std::size_t r = 0; r < p.m; ++r) {
      d[r] = out(r, l) > T(0) ? upstream(r, l) : T(0);
      any = any || d[r] != T(0);
    }
    if (!any) continue;
    for (std::size_t r = 0; r < p.m; ++r) grad.b[r] += d[r];
    for (std::size_t s = 0; s < p.region_size && l + s < T_; ++s) {
      const std::size_t c = detail::conv_col(p, s, ids[l + s]);
      for (std::size_t r = 0; r < p.m; ++r) grad.W(r, c) += d[r];
    }
    for (std::size_t j = 0; j < side.size(); ++j) {
      const auto& S = p.side[j].W;
      const auto& X = *side[j];
      auto& G = grad.side[j].W;
      for (std::size_t r = 0; r < p.m; ++r) {
        if (d[r] == T(0)) continue;
        for (std::size_t k = 0; k < S.cols(); ++k) {
          G(r, k) += d[r] * X(k, l);
          if (side_grads) (*side_grads)[j](k, l) += S(r, k) * d[r];
        }
      }
    }
  }
}

template <typename T>
ConvGradients<T> conv_gradients(const ConvParams<T>& p, std::span<const WordId> ids, const Matrix<T>& upstream,
                                std::span<const Matrix<T>* const> side = {}) {
  auto out = conv_forward(p, ids, side);
  ConvGradients<T> g{p.zeros_like(), {}};
  conv_backward(p, ids, side, out, upstream, g.params, &g.side);
  return g;
}

}  // namespace rgem
