// Update rules, dropout masks, training configuration and the named-tensor
// view that optimizers, gradient checks and serialization iterate over.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rgem/conv.hpp"
#include "rgem/lstm.hpp"
#include "rgem/numkernel.hpp"

namespace rgem {

/// A named view of one parameter tensor (`U` may be const-qualified).
template <typename U>
struct TensorRef {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<U> data;
};

template <typename U>
TensorRef<U> tensor_ref(std::string name, std::size_t rows, std::size_t cols, std::span<U> data) {
  return {std::move(name), rows, cols, data};
}

/// Visits every tensor of an LSTM as f(TensorRef). Works for const params.
template <typename P, typename F>
void visit_lstm(P& p, const std::string& prefix, F&& f) {
  static constexpr const char* kFull[] = {"i", "o", "f", "u"};
  static constexpr const char* kSimple[] = {"f", "u"};
  const bool full = p.variant == LstmVariant::full;
  for (std::size_t g = 0; g < p.gates.size(); ++g) {
    const std::string gn = full ? kFull[g] : kSimple[g];
    auto& gp = p.gates[g];
    f(tensor_ref(prefix + "W." + gn, gp.Wx.rows(), gp.Wx.cols(), gp.Wx.span()));
    f(tensor_ref(prefix + "U." + gn, gp.Uh.rows(), gp.Uh.cols(), gp.Uh.span()));
    f(tensor_ref(prefix + "b." + gn, gp.b.size(), std::size_t{1}, std::span(gp.b)));
  }
  for (auto& s : p.side)
    for (std::size_t g = 0; g < s.W.size(); ++g) {
      const std::string gn = full ? kFull[g] : kSimple[g];
      f(tensor_ref(prefix + "side." + s.tv_id + "." + gn, s.W[g].rows(), s.W[g].cols(), s.W[g].span()));
    }
}

template <typename P, typename F>
void visit_conv(P& p, const std::string& prefix, F&& f) {
  f(tensor_ref(prefix + "W", p.W.rows(), p.W.cols(), p.W.span()));
  f(tensor_ref(prefix + "b", p.b.size(), std::size_t{1}, std::span(p.b)));
  for (auto& s : p.side) f(tensor_ref(prefix + "side." + s.tv_id, s.W.rows(), s.W.cols(), s.W.span()));
}

// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  bool rmsprop = false;
  double rmsprop_decay = 0.9;
  double rmsprop_eps = 1e-6;
  std::size_t minibatch = 50;
  std::size_t epochs = 10;
  std::optional<std::size_t> chop_len;
  std::size_t chop_overlap = 0;
  double dropout_rate = 0.5;
  std::uint64_t seed = 1;
  double dev_fraction = 0.0;
  double init_std = 0.01;
  std::size_t workers = 1;
  bool deterministic = true;
  bool verbose = false;

  void validate() const {
    require(lr >= 0, "TrainConfig: lr must be >= 0");
    require(minibatch >= 1, "TrainConfig: minibatch must be >= 1");
    require(dropout_rate >= 0 && dropout_rate < 1, "TrainConfig: dropout_rate must be in [0,1)");
    require(momentum >= 0 && momentum < 1, "TrainConfig: momentum must be in [0,1)");
    require(rmsprop_decay >= 0 && rmsprop_decay < 1, "TrainConfig: rmsprop_decay must be in [0,1)");
    require(rmsprop_eps > 0, "TrainConfig: rmsprop_eps must be > 0");
    require(workers >= 1, "TrainConfig: workers must be >= 1");
    require(!chop_len || *chop_len >= 1, "TrainConfig: chop_len must be >= 1");
  }
  ChopSpec chop() const { return chop_len ? ChopSpec{*chop_len, chop_overlap} : ChopSpec{}; }
};

/// Classical momentum: v <- momentum*v - lr*g; theta <- theta + v.
template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, const TrainConfig& cfg) {
  require(param.size() == grad.size() && param.size() == velocity.size(), "sgd_step: shape mismatch");
  const T mu = static_cast<T>(cfg.momentum), lr = static_cast<T>(cfg.lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = mu * velocity[i] - lr * grad[i];
    param[i] += velocity[i];
  }
}

/// r <- decay*r + (1-decay)*g^2; theta <- theta - lr*g/sqrt(r + eps).
template <typename T>
void rmsprop_step(std::span<T> param, std::span<const T> grad, std::span<T> cache, const TrainConfig& cfg) {
  require(param.size() == grad.size() && param.size() == cache.size(), "rmsprop_step: shape mismatch");
  const T decay = static_cast<T>(cfg.rmsprop_decay), lr = static_cast<T>(cfg.lr),
          eps = static_cast<T>(cfg.rmsprop_eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    cache[i] = decay * cache[i] + (T(1) - decay) * grad[i] * grad[i];
    param[i] -= lr * grad[i] / std::sqrt(cache[i] + eps);
  }
}

/// Holds per-tensor velocity (momentum) or squared-gradient cache (rmsprop).
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(const std::vector<TensorRef<T>>& params, const std::vector<TensorRef<T>>& grads) {
    require(params.size() == grads.size(), "Optimizer::step: tensor count mismatch");
    if (state_.empty())
      for (const auto& p : params) state_.emplace_back(p.data.size(), T(0));
    require(state_.size() == params.size(), "Optimizer::step: tensor set changed");
    for (std::size_t k = 0; k < params.size(); ++k) {
      std::span<const T> g(grads[k].data.data(), grads[k].data.size());
      if (cfg_.rmsprop)
        rmsprop_step<T>(params[k].data, g, state_[k], cfg_);
      else
        sgd_step<T>(params[k].data, g, state_[k], cfg_);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Vec<T>> state_;
};

/// Inverted dropout: entries are 0 with probability `rate`, else 1/(1-rate).
template <typename T>
Vec<T> dropout_mask(std::size_t dim, double rate, Rng& rng) {
  require(rate >= 0 && rate < 1, "dropout_mask: rate must be in [0,1)");
  Vec<T> mask(dim, T(1));
  if (rate == 0) return mask;
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& x : mask) x = rng.uniform() < rate ? T(0) : keep;
  return mask;
}

}  // namespace rgem
