// Full and simplified LSTM region embeddings over one-hot or dense input.
//
// Sequences are processed in lockstep batches: every document (or chopped
// segment) becomes a "unit", units are sorted by length, and step s updates
// the first n_s units at once as q x n_s matrices. A single document is a
// batch of one unit.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "rgem/corpus.hpp"
#include "rgem/numkernel.hpp"

namespace rgem {

enum class LstmVariant { full, simplified };
enum class InputKind { one_hot, dense };
enum class Gate { i, o, f, u };
enum class Direction { forward, backward };

inline const char* to_string(LstmVariant v) { return v == LstmVariant::full ? "full" : "simplified"; }
inline const char* to_string(Direction d) { return d == Direction::forward ? "fwd" : "bwd"; }

template <typename T>
struct GateParams {
  Matrix<T> Wx;  // q x input_dim
  Matrix<T> Uh;  // q x q
  Vec<T> b;      // q
  friend bool operator==(const GateParams&, const GateParams&) = default;
};

/// Trainable matrices feeding one frozen side input into every gate.
template <typename T>
struct SideInputParams {
  std::string tv_id;
  std::size_t dim = 0;
  std::vector<Matrix<T>> W;  // one q x dim matrix per gate, gate order as LstmParams
  friend bool operator==(const SideInputParams&, const SideInputParams&) = default;
};

/// Gate order in `gates`: full = {i, o, f, u}; simplified = {f, u}.
template <typename T>
struct LstmParams {
  LstmVariant variant = LstmVariant::simplified;
  std::size_t q = 0;
  std::size_t input_dim = 0;
  InputKind input_kind = InputKind::one_hot;
  std::vector<GateParams<T>> gates;
  std::vector<SideInputParams<T>> side;

  static constexpr std::size_t gate_count(LstmVariant v) { return v == LstmVariant::full ? 4 : 2; }
  std::size_t gate_count() const { return gate_count(variant); }

  static constexpr int slot(LstmVariant v, Gate g) {
    if (v == LstmVariant::full) return static_cast<int>(g);
    return g == Gate::f ? 0 : g == Gate::u ? 1 : -1;
  }
  int slot(Gate g) const { return slot(variant, g); }
  bool has(Gate g) const { return slot(g) >= 0; }
  GateParams<T>& gate(Gate g) { return gates.at(static_cast<std::size_t>(slot(g))); }
  const GateParams<T>& gate(Gate g) const { return gates.at(static_cast<std::size_t>(slot(g))); }

  static LstmParams zeros(LstmVariant variant, std::size_t q, std::size_t input_dim, InputKind kind) {
    LstmParams p;
    p.variant = variant;
    p.q = q;
    p.input_dim = input_dim;
    p.input_kind = kind;
    p.gates.resize(gate_count(variant));
    for (auto& g : p.gates) g = {Matrix<T>(q, input_dim), Matrix<T>(q, q), Vec<T>(q, T(0))};
    return p;
  }

  /// Gaussian weights, zero biases.
  static LstmParams random(LstmVariant variant, std::size_t q, std::size_t input_dim, InputKind kind,
                           double stddev, Rng& rng) {
    auto p = zeros(variant, q, input_dim, kind);
    for (auto& g : p.gates) {
      gaussian_fill<T>(g.Wx.span(), stddev, rng);
      gaussian_fill<T>(g.Uh.span(), stddev, rng);
    }
    return p;
  }

  void add_side(std::string tv_id, std::size_t dim, double stddev, Rng& rng) {
    SideInputParams<T> s{std::move(tv_id), dim, {}};
    for (std::size_t g = 0; g < gate_count(); ++g) s.W.push_back(gaussian_init<T>(q, dim, stddev, rng));
    side.push_back(std::move(s));
  }

  /// Same shapes, all zeros; used as a gradient accumulator.
  LstmParams zeros_like() const {
    auto p = zeros(variant, q, input_dim, input_kind);
    for (const auto& s : side) {
      SideInputParams<T> z{s.tv_id, s.dim, {}};
      for (const auto& m : s.W) z.W.push_back(rgem::zeros_like(m));
      p.side.push_back(std::move(z));
    }
    return p;
  }

  void validate() const {
    require(gates.size() == gate_count(), "LstmParams: wrong gate count for variant");
    for (const auto& g : gates) {
      require(g.Wx.rows() == q && g.Wx.cols() == input_dim, "LstmParams: Wx shape");
      require(g.Uh.rows() == q && g.Uh.cols() == q, "LstmParams: Uh shape");
      require(g.b.size() == q, "LstmParams: bias shape");
    }
    for (const auto& s : side) {
      require(s.W.size() == gate_count(), "LstmParams: side matrix count");
      for (const auto& m : s.W) require(m.rows() == q && m.cols() == s.dim, "LstmParams: side matrix shape");
    }
  }

  friend bool operator==(const LstmParams&, const LstmParams&) = default;
};

template <typename T>
struct LstmState {
  Vec<T> c;
  Vec<T> h;
  static LstmState zeros(std::size_t q) { return {Vec<T>(q, T(0)), Vec<T>(q, T(0))}; }
};

/// Forces i_t and/or o_t to all ones (full variant only).
struct GateOverride {
  bool input_gate_one = false;
  bool output_gate_one = false;
};

/// Chopping: segments of `seg_len` (0 = off). `overlap` tokens preceding each
/// segment are run as warm-up context without emitting output.
struct ChopSpec {
  std::size_t seg_len = 0;
  std::size_t overlap = 0;
  bool enabled() const noexcept { return seg_len > 0; }
};

/// One document's input to an LSTM: word ids (one-hot) or a dense
/// input_dim x T matrix, plus side inputs aligned to absolute positions.
template <typename T>
struct SequenceInput {
  std::span<const WordId> ids;
  const Matrix<T>* dense = nullptr;
  std::vector<const Matrix<T>*> side;

  std::size_t length() const noexcept { return dense ? dense->cols() : ids.size(); }
};

namespace detail {

template <typename T>
void check_input(const LstmParams<T>& p, const SequenceInput<T>& in) {
  if (p.input_kind == InputKind::one_hot) {
    require(in.dense == nullptr, "LSTM: one-hot params given dense input");
    for (WordId id : in.ids) require(id < p.input_dim, "LSTM: word id >= input_dim");
  } else {
    require(in.dense != nullptr, "LSTM: dense params given id input");
    require(in.dense->rows() == p.input_dim, "LSTM: dense input rows != input_dim");
  }
  require(in.side.size() == p.side.size(), "LSTM: side input count mismatch");
  for (std::size_t j = 0; j < in.side.size(); ++j) {
    require(in.side[j] != nullptr, "LSTM: null side input");
    require(in.side[j]->rows() == p.side[j].dim, "LSTM: side input dim mismatch");
    require(in.side[j]->cols() == in.length(), "LSTM: side input length mismatch");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Batched engine

/// A contiguous run of positions processed with fresh zero state.
struct LstmUnit {
  std::size_t doc = 0;
  std::ptrdiff_t first = 0;  // absolute position at step 0
  int step = 1;              // +1 forward, -1 backward
  std::size_t length = 0;    // steps including warm-up
  std::size_t warmup = 0;    // leading steps that emit no output

  std::size_t pos(std::size_t s) const noexcept {
    return static_cast<std::size_t>(first + static_cast<std::ptrdiff_t>(s) * step);
  }
};

/// Splits documents of the given lengths into units, longest first.
inline std::vector<LstmUnit> plan_units(std::span<const std::size_t> lengths, Direction dir, ChopSpec chop) {
  std::vector<LstmUnit> units;
  for (std::size_t d = 0; d < lengths.size(); ++d) {
    const std::size_t T = lengths[d];
    if (T == 0) continue;
    const std::size_t seg = chop.enabled() ? chop.seg_len : T;
    for (std::size_t off = 0; off < T; off += seg) {
      // offsets are in processing order (reversed for backward)
      const std::size_t len = std::min(seg, T - off);
      const std::size_t warm = chop.enabled() ? std::min(chop.overlap, off) : 0;
      const std::size_t start = off - warm;
      LstmUnit u;
      u.doc = d;
      u.length = len + warm;
      u.warmup = warm;
      if (dir == Direction::forward) {
        u.first = static_cast<std::ptrdiff_t>(start);
        u.step = 1;
      } else {
        u.first = static_cast<std::ptrdiff_t>(T - 1 - start);
        u.step = -1;
      }
      units.push_back(u);
    }
  }
  std::stable_sort(units.begin(), units.end(), [](const LstmUnit& a, const LstmUnit& b) { return a.length > b.length; });
  return units;
}

template <typename T>
struct LstmStepCache {
  std::size_t n = 0;                 // active units (a prefix of the sorted units)
  std::array<Matrix<T>, 4> act;      // gate activations by slot, q x n each
  Matrix<T> c;                       // q x n
  Matrix<T> tc;                      // tanh(c)
  Matrix<T> h;                       // q x n
};

template <typename T>
struct LstmBatch {
  std::vector<LstmUnit> units;
  std::vector<LstmStepCache<T>> steps;
  std::vector<Matrix<T>> outputs;  // per document, q x T
  GateOverride override_;
};

/// Per-document gradients with respect to the inputs of the LSTM.
template <typename T>
struct LstmInputGrads {
  std::vector<Matrix<T>> dense;              // per doc, input_dim x T (dense input only)
  std::vector<std::vector<Matrix<T>>> side;  // per doc, per side input, dim x T
};

namespace detail {

/// A[r, 0..n) += Σ_k M(r,k) · X[k, 0..n), with X of row stride `xs`.
template <typename T>
void gemm_acc(const Matrix<T>& M, const T* X, std::size_t xs, std::size_t n, T* A, std::size_t as) {
  const std::size_t rows = M.rows(), inner = M.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    T* a = A + r * as;
    const T* m = M.row(r);
    for (std::size_t k = 0; k < inner; ++k) {
      const T w = m[k];
      if (w == T(0)) continue;
      const T* x = X + k * xs;
      for (std::size_t b = 0; b < n; ++b) a[b] += w * x[b];
    }
  }
}

/// G(r,k) += Σ_b D[r,b] · X[k,b]
template <typename T>
void gemm_nt_acc(const T* D, std::size_t ds, const T* X, std::size_t xs, std::size_t n, Matrix<T>& G) {
  for (std::size_t r = 0; r < G.rows(); ++r) {
    const T* d = D + r * ds;
    T* g = G.row(r);
    for (std::size_t k = 0; k < G.cols(); ++k) {
      const T* x = X + k * xs;
      T acc = T(0);
      for (std::size_t b = 0; b < n; ++b) acc += d[b] * x[b];
      g[k] += acc;
    }
  }
}

/// Y[k, 0..n) += Σ_r M(r,k) · D[r, 0..n)
template <typename T>
void gemm_tn_acc(const Matrix<T>& M, const T* D, std::size_t ds, std::size_t n, T* Y, std::size_t ys) {
  for (std::size_t r = 0; r < M.rows(); ++r) {
    const T* m = M.row(r);
    const T* d = D + r * ds;
    for (std::size_t k = 0; k < M.cols(); ++k) {
      const T w = m[k];
      if (w == T(0)) continue;
      T* y = Y + k * ys;
      for (std::size_t b = 0; b < n; ++b) y[b] += w * d[b];
    }
  }
}

/// Gathers column `pos(b)` of per-document matrices into a k x n block.
template <typename T, typename ColFn>
Matrix<T> gather_cols(std::size_t rows, std::size_t n, ColFn&& col_of) {
  Matrix<T> X(rows, n);
  for (std::size_t b = 0; b < n; ++b) {
    auto [M, pos] = col_of(b);
    for (std::size_t k = 0; k < rows; ++k) X(k, b) = (*M)(k, pos);
  }
  return X;
}

}  // namespace detail

/// Runs every document in `inputs` through the LSTM in one lockstep batch.
/// Outputs are indexed by absolute document position. With `keep_cache` the
/// activations needed for lstm_backward_batch are retained.
template <typename T>
LstmBatch<T> lstm_forward_batch(const LstmParams<T>& p, std::span<const SequenceInput<T>> inputs, Direction dir,
                                ChopSpec chop = {}, GateOverride ov = {}, bool keep_cache = true) {
  p.validate();
  require(p.variant == LstmVariant::full || (!ov.input_gate_one && !ov.output_gate_one),
          "GateOverride only applies to the full variant");
  std::vector<std::size_t> lengths(inputs.size());
  for (std::size_t d = 0; d < inputs.size(); ++d) {
    detail::check_input(p, inputs[d]);
    lengths[d] = inputs[d].length();
  }
  const std::size_t q = p.q;
  const std::size_t G = p.gate_count();
  const bool full = p.variant == LstmVariant::full;
  const int si = p.slot(Gate::i), so = p.slot(Gate::o), sf = p.slot(Gate::f), su = p.slot(Gate::u);

  LstmBatch<T> out;
  out.override_ = ov;
  out.units = plan_units(lengths, dir, chop);
  out.outputs.resize(inputs.size());
  for (std::size_t d = 0; d < inputs.size(); ++d) out.outputs[d] = Matrix<T>(q, lengths[d]);
  if (out.units.empty()) return out;

  const auto& units = out.units;
  const std::size_t max_len = units.front().length;
  LstmStepCache<T> scratch;  // step s-1 when not caching
  const LstmStepCache<T>* prevp = nullptr;
  if (keep_cache) out.steps.reserve(max_len);

  for (std::size_t s = 0; s < max_len; ++s) {
    std::size_t n = 0;
    while (n < units.size() && units[n].length > s) ++n;

    LstmStepCache<T> cur;
    cur.n = n;
    for (std::size_t g = 0; g < G; ++g) {
      Matrix<T> A(q, n);
      const auto& gp = p.gates[g];
      for (std::size_t r = 0; r < q; ++r) std::fill_n(A.row(r), n, gp.b[r]);
      // input term
      if (p.input_kind == InputKind::one_hot) {
        for (std::size_t b = 0; b < n; ++b) {
          const WordId id = inputs[units[b].doc].ids[units[b].pos(s)];
          for (std::size_t r = 0; r < q; ++r) A(r, b) += gp.Wx(r, id);
        }
      } else {
        auto X = detail::gather_cols<T>(p.input_dim, n, [&](std::size_t b) {
          return std::pair{inputs[units[b].doc].dense, units[b].pos(s)};
        });
        detail::gemm_acc(gp.Wx, X.row(0), n, n, A.row(0), n);
      }
      // side inputs
      for (std::size_t j = 0; j < p.side.size(); ++j) {
        auto X = detail::gather_cols<T>(p.side[j].dim, n, [&](std::size_t b) {
          return std::pair{inputs[units[b].doc].side[j], units[b].pos(s)};
        });
        detail::gemm_acc(p.side[j].W[g], X.row(0), n, n, A.row(0), n);
      }
      // recurrent term
      if (prevp) detail::gemm_acc(gp.Uh, prevp->h.row(0), prevp->n, n, A.row(0), n);

      const bool forced = full && ((static_cast<int>(g) == si && ov.input_gate_one) ||
                                   (static_cast<int>(g) == so && ov.output_gate_one));
      auto& a = A.data();
      if (forced) {
        std::fill(a.begin(), a.end(), T(1));
      } else if (static_cast<int>(g) == su) {
        for (auto& x : a) x = std::tanh(x);
      } else {
        for (auto& x : a) x = sigmoid(x);
      }
      cur.act[g] = std::move(A);
    }

    cur.c = Matrix<T>(q, n);
    cur.tc = Matrix<T>(q, n);
    cur.h = Matrix<T>(q, n);
    for (std::size_t r = 0; r < q; ++r) {
      const T* f = cur.act[sf].row(r);
      const T* u = cur.act[su].row(r);
      const T* cp = prevp ? prevp->c.row(r) : nullptr;
      T* c = cur.c.row(r);
      T* tc = cur.tc.row(r);
      T* h = cur.h.row(r);
      for (std::size_t b = 0; b < n; ++b) {
        const T carry = cp ? f[b] * cp[b] : T(0);
        c[b] = full ? cur.act[si](r, b) * u[b] + carry : u[b] + carry;
        tc[b] = std::tanh(c[b]);
        h[b] = full ? cur.act[so](r, b) * tc[b] : tc[b];
      }
    }
    for (std::size_t b = 0; b < n; ++b) {
      if (s < units[b].warmup) continue;
      auto& O = out.outputs[units[b].doc];
      const std::size_t pos = units[b].pos(s);
      for (std::size_t r = 0; r < q; ++r) O(r, pos) = cur.h(r, b);
    }
    if (keep_cache) {
      out.steps.push_back(std::move(cur));
      prevp = &out.steps.back();
    } else {
      scratch = std::move(cur);
      prevp = &scratch;
    }
  }
  return out;
}

/// Exact backpropagation through time for a batch produced with keep_cache.
/// `upstream[d]` is dL/dh for document d (q x T). Parameter gradients are
/// added into `grad`; input gradients into `input_grads` when non-null.
template <typename T>
void lstm_backward_batch(const LstmParams<T>& p, std::span<const SequenceInput<T>> inputs, const LstmBatch<T>& fwd,
                         std::span<const Matrix<T>> upstream, LstmParams<T>& grad,
                         LstmInputGrads<T>* input_grads = nullptr) {
  require(upstream.size() == inputs.size(), "lstm_backward_batch: upstream count mismatch");
  for (std::size_t d = 0; d < inputs.size(); ++d)
    require(upstream[d].rows() == p.q && upstream[d].cols() == inputs[d].length(),
            "lstm_backward_batch: upstream shape mismatch");
  require(fwd.units.empty() || fwd.steps.size() == fwd.units.front().length,
          "lstm_backward_batch: forward pass kept no cache");
  const std::size_t q = p.q;
  const std::size_t G = p.gate_count();
  const bool full = p.variant == LstmVariant::full;
  const int si = p.slot(Gate::i), so = p.slot(Gate::o), sf = p.slot(Gate::f), su = p.slot(Gate::u);
  const bool train_i = full && !fwd.override_.input_gate_one;
  const bool train_o = full && !fwd.override_.output_gate_one;

  if (input_grads) {
    input_grads->dense.assign(inputs.size(), Matrix<T>());
    input_grads->side.assign(inputs.size(), {});
    for (std::size_t d = 0; d < inputs.size(); ++d) {
      if (p.input_kind == InputKind::dense) input_grads->dense[d] = Matrix<T>(p.input_dim, inputs[d].length());
      for (const auto& sp : p.side) input_grads->side[d].emplace_back(sp.dim, inputs[d].length());
    }
  }
  const auto& units = fwd.units;
  Matrix<T> dh_next, dc_next;  // q x n_{s+1}
  std::size_t n_next = 0;

  for (std::size_t s = fwd.steps.size(); s-- > 0;) {
    const auto& cur = fwd.steps[s];
    const std::size_t n = cur.n;
    const LstmStepCache<T>* prev = s > 0 ? &fwd.steps[s - 1] : nullptr;

    Matrix<T> dh(q, n), dc(q, n);
    for (std::size_t r = 0; r < q; ++r)
      for (std::size_t b = 0; b < n_next; ++b) {
        dh(r, b) = dh_next(r, b);
        dc(r, b) = dc_next(r, b);
      }
    for (std::size_t b = 0; b < n; ++b) {
      if (s < units[b].warmup) continue;
      const auto& U = upstream[units[b].doc];
      const std::size_t pos = units[b].pos(s);
      for (std::size_t r = 0; r < q; ++r) dh(r, b) += U(r, pos);
    }

    std::array<Matrix<T>, 4> da;
    for (std::size_t g = 0; g < G; ++g) da[g] = Matrix<T>(q, n);
    for (std::size_t r = 0; r < q; ++r) {
      for (std::size_t b = 0; b < n; ++b) {
        const T tc = cur.tc(r, b);
        const T o = full ? cur.act[so](r, b) : T(1);
        const T i = full ? cur.act[si](r, b) : T(1);
        const T f = cur.act[sf](r, b);
        const T u = cur.act[su](r, b);
        const T cp = prev ? prev->c(r, b) : T(0);
        const T dhv = dh(r, b);
        const T dcv = dc(r, b) + dhv * o * (T(1) - tc * tc);
        dc(r, b) = dcv * f;  // becomes dc for step s-1
        if (train_o) da[so](r, b) = dhv * tc * o * (T(1) - o);
        if (train_i) da[si](r, b) = dcv * u * i * (T(1) - i);
        da[sf](r, b) = dcv * cp * f * (T(1) - f);
        da[su](r, b) = dcv * i * (T(1) - u * u);
      }
    }

    Matrix<T> dh_prev(q, n);
    for (std::size_t g = 0; g < G; ++g) {
      if ((static_cast<int>(g) == si && !train_i && full) || (static_cast<int>(g) == so && !train_o && full)) continue;
      const auto& gp = p.gates[g];
      auto& gg = grad.gates[g];
      const Matrix<T>& D = da[g];
      for (std::size_t r = 0; r < q; ++r) {
        T acc = T(0);
        for (std::size_t b = 0; b < n; ++b) acc += D(r, b);
        gg.b[r] += acc;
      }
      if (prev) {
        detail::gemm_nt_acc(D.row(0), n, prev->h.row(0), prev->n, n, gg.Uh);
        detail::gemm_tn_acc(gp.Uh, D.row(0), n, n, dh_prev.row(0), n);
      }
      if (p.input_kind == InputKind::one_hot) {
        for (std::size_t b = 0; b < n; ++b) {
          const WordId id = inputs[units[b].doc].ids[units[b].pos(s)];
          for (std::size_t r = 0; r < q; ++r) gg.Wx(r, id) += D(r, b);
        }
      } else {
        auto X = detail::gather_cols<T>(p.input_dim, n, [&](std::size_t b) {
          return std::pair{inputs[units[b].doc].dense, units[b].pos(s)};
        });
        detail::gemm_nt_acc(D.row(0), n, X.row(0), n, n, gg.Wx);
        if (input_grads) {
          Matrix<T> dX(p.input_dim, n);
          detail::gemm_tn_acc(gp.Wx, D.row(0), n, n, dX.row(0), n);
          for (std::size_t b = 0; b < n; ++b) {
            auto& M = input_grads->dense[units[b].doc];
            const std::size_t pos = units[b].pos(s);
            for (std::size_t k = 0; k < p.input_dim; ++k) M(k, pos) += dX(k, b);
          }
        }
      }
      for (std::size_t j = 0; j < p.side.size(); ++j) {
        auto X = detail::gather_cols<T>(p.side[j].dim, n, [&](std::size_t b) {
          return std::pair{inputs[units[b].doc].side[j], units[b].pos(s)};
        });
        detail::gemm_nt_acc(D.row(0), n, X.row(0), n, n, grad.side[j].W[g]);
        if (input_grads) {
          Matrix<T> dX(p.side[j].dim, n);
          detail::gemm_tn_acc(p.side[j].W[g], D.row(0), n, n, dX.row(0), n);
          for (std::size_t b = 0; b < n; ++b) {
            auto& M = input_grads->side[units[b].doc][j];
            const std::size_t pos = units[b].pos(s);
            for (std::size_t k = 0; k < p.side[j].dim; ++k) M(k, pos) += dX(k, b);
          }
        }
      }
    }
    dh_next = std::move(dh_prev);
    dc_next = std::move(dc);
    n_next = n;
  }
}

// ---------------------------------------------------------------------------
// Single-step and single-document conveniences

namespace detail {
template <typename T, typename AddInput>
LstmState<T> step_impl(const LstmParams<T>& p, AddInput&& add_input, const LstmState<T>& prev,
                       std::span<const Vec<T>> side_vals, GateOverride ov) {
  require(prev.c.size() == p.q && prev.h.size() == p.q, "lstm_step: state dimension mismatch");
  require(side_vals.size() == p.side.size(), "lstm_step: side value count mismatch");
  for (std::size_t j = 0; j < side_vals.size(); ++j)
    require(side_vals[j].size() == p.side[j].dim, "lstm_step: side value dimension mismatch");
  require(p.variant == LstmVariant::full || (!ov.input_gate_one && !ov.output_gate_one),
          "GateOverride only applies to the full variant");
  const bool full = p.variant == LstmVariant::full;
  std::array<Vec<T>, 4> act;
  for (std::size_t g = 0; g < p.gate_count(); ++g) {
    const auto& gp = p.gates[g];
    Vec<T> a = affine_dense<T>(gp.Uh, gp.b, prev.h);
    add_input(gp.Wx, a);
    for (std::size_t j = 0; j < side_vals.size(); ++j) {
      const auto& S = p.side[j].W[g];
      for (std::size_t r = 0; r < p.q; ++r)
        for (std::size_t k = 0; k < S.cols(); ++k) a[r] += S(r, k) * side_vals[j][k];
    }
    const bool forced = full && ((static_cast<int>(g) == p.slot(Gate::i) && ov.input_gate_one) ||
                                 (static_cast<int>(g) == p.slot(Gate::o) && ov.output_gate_one));
    if (forced)
      std::fill(a.begin(), a.end(), T(1));
    else
      a = elementwise<T>(static_cast<int>(g) == p.slot(Gate::u) ? Elementwise::tanh : Elementwise::sigmoid, a);
    act[g] = std::move(a);
  }
  const auto& f = act[p.slot(Gate::f)];
  const auto& u = act[p.slot(Gate::u)];
  LstmState<T> next{Vec<T>(p.q), Vec<T>(p.q)};
  for (std::size_t r = 0; r < p.q; ++r) {
    const T carry = f[r] * prev.c[r];
    next.c[r] = full ? act[p.slot(Gate::i)][r] * u[r] + carry : u[r] + carry;
    const T tc = std::tanh(next.c[r]);
    next.h[r] = full ? act[p.slot(Gate::o)][r] * tc : tc;
  }
  return next;
}
}  // namespace detail

/// One LSTM step on a sparse (one-hot or bow) input.
template <typename T>
LstmState<T> lstm_step(const LstmParams<T>& p, const SparseVector& x, const LstmState<T>& prev,
                       std::span<const Vec<T>> side_vals = {}, GateOverride ov = {}) {
  require(p.input_kind == InputKind::one_hot, "lstm_step: sparse input needs one-hot params");
  require(x.dim == p.input_dim, "lstm_step: input dimension mismatch");
  return detail::step_impl(
      p,
      [&](const Matrix<T>& Wx, Vec<T>& a) {
        for (const auto& e : x.entries)
          for (std::size_t r = 0; r < p.q; ++r) a[r] += static_cast<T>(e.value) * Wx(r, e.index);
      },
      prev, side_vals, ov);
}

/// One LSTM step on a dense input vector.
template <typename T>
LstmState<T> lstm_step(const LstmParams<T>& p, std::span<const T> x, const LstmState<T>& prev,
                       std::span<const Vec<T>> side_vals = {}, GateOverride ov = {}) {
  require(p.input_kind == InputKind::dense, "lstm_step: dense input needs dense params");
  require(x.size() == p.input_dim, "lstm_step: input dimension mismatch");
  return detail::step_impl(
      p,
      [&](const Matrix<T>& Wx, Vec<T>& a) {
        for (std::size_t r = 0; r < p.q; ++r)
          for (std::size_t k = 0; k < x.size(); ++k) a[r] += Wx(r, k) * x[k];
      },
      prev, side_vals, ov);
}

/// h_t for every position, zero initial state (reset per segment when chopping).
template <typename T>
Matrix<T> forward_sequence(const LstmParams<T>& p, const SequenceInput<T>& in, ChopSpec chop = {},
                           GateOverride ov = {}) {
  auto b = lstm_forward_batch<T>(p, std::span(&in, 1), Direction::forward, chop, ov, false);
  return std::move(b.outputs.front());
}

/// Right-to-left pass; outputs re-indexed to original positions.
template <typename T>
Matrix<T> reverse_forward(const LstmParams<T>& p, const SequenceInput<T>& in, ChopSpec chop = {},
                          GateOverride ov = {}) {
  auto b = lstm_forward_batch<T>(p, std::span(&in, 1), Direction::backward, chop, ov, false);
  return std::move(b.outputs.front());
}

template <typename T>
struct SequenceGradients {
  LstmParams<T> params;
  std::vector<Matrix<T>> side;  // dL/d(side input j), dim_j x T
  Matrix<T> input;              // dL/dx for dense input
};

/// Gradients of the scalar loss implied by `upstream` (dL/dh, q x T).
template <typename T>
SequenceGradients<T> sequence_gradients(const LstmParams<T>& p, const SequenceInput<T>& in,
                                        const Matrix<T>& upstream, Direction dir = Direction::forward,
                                        ChopSpec chop = {}, GateOverride ov = {}) {
  auto fwd = lstm_forward_batch<T>(p, std::span(&in, 1), dir, chop, ov, true);
  SequenceGradients<T> g{p.zeros_like(), {}, {}};
  LstmInputGrads<T> ig;
  lstm_backward_batch<T>(p, std::span(&in, 1), fwd, std::span(&upstream, 1), g.params, &ig);
  g.side = std::move(ig.side.front());
  g.input = std::move(ig.dense.front());
  return g;
}

// ---------------------------------------------------------------------------
// Word embeddings

/// Column `id` of the embedding matrix V (d x |V|).
template <typename T>
Vec<T> embedding_layer(const Matrix<T>& V, WordId id) {
  require(id < V.cols(), "embedding_layer: id out of range");
  return V.col(id);
}

/// d x T matrix of embedded words.
template <typename T>
Matrix<T> embed_sequence(const Matrix<T>& V, std::span<const WordId> ids) {
  Matrix<T> X(V.rows(), ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    require(ids[t] < V.cols(), "embed_sequence: id out of range");
    for (std::size_t k = 0; k < V.rows(); ++k) X(k, t) = V(k, ids[t]);
  }
  return X;
}

/// Replaces each Wx by Wx·V, turning an embedding-fed LSTM into a one-hot LSTM.
template <typename T>
LstmParams<T> fold_embedding(const LstmParams<T>& p, const Matrix<T>& V) {
  require(p.input_kind == InputKind::dense, "fold_embedding: params must take dense input");
  require(p.input_dim == V.rows(), "fold_embedding: input_dim != V.rows");
  LstmParams<T> out = p;
  out.input_kind = InputKind::one_hot;
  out.input_dim = V.cols();
  for (auto& g : out.gates) {
    Matrix<T> W(p.q, V.cols());
    for (std::size_t r = 0; r < p.q; ++r)
      for (std::size_t k = 0; k < V.rows(); ++k) {
        const T w = g.Wx(r, k);
        const T* v = V.row(k);
        T* o = W.row(r);
        for (std::size_t c = 0; c < V.cols(); ++c) o[c] += w * v[c];
      }
    g.Wx = std::move(W);
  }
  return out;
}

}  // namespace rgem
