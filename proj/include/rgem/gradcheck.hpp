// Central finite-difference check of analytic model gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <type_traits>
#include <vector>

#include "rgem/model.hpp"

namespace rgem {

struct TensorCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel_err = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double max_rel_err = 0;
  double threshold = 1e-4;
  bool pass = true;

  std::string to_string() const {
    std::string s;
    char buf[256];
    for (const auto& t : tensors) {
      std::snprintf(buf, sizeof buf, "%-32s coords=%-6zu max_rel_err=%.3e %s\n", t.name.c_str(), t.checked,
                    t.max_rel_err, t.pass ? "ok" : "FAIL");
      s += buf;
    }
    std::snprintf(buf, sizeof buf, "global max_rel_err=%.3e threshold=%.1e %s\n", max_rel_err, threshold,
                  pass ? "PASS" : "FAIL");
    return s + buf;
  }
};

inline double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

struct GradCheckOptions {
  double eps = 1e-4;
  double threshold = 1e-4;
  std::size_t max_coords_per_tensor = 200;  // 0 = every coordinate
  std::uint64_t seed = 0;
};

/// Compares eval-mode analytic gradients of the square loss on one labeled
/// document against central differences (L(θ+ε) - L(θ-ε)) / 2ε. Tensors
/// larger than max_coords_per_tensor are checked on a seeded subsample.
/// `corrupt` may alter the analytic gradient before comparison.
template <typename T>
GradCheckReport grad_check(const Model<T>& model, const TokenSequence& doc, const GradCheckOptions& opt = {},
                           const std::function<void(Model<T>&)>& corrupt = {}) {
  if constexpr (!std::is_same_v<T, double>) {
    throw ContractError("grad_check requires 64-bit precision");
  } else {
    require(doc.label.has_value(), "grad_check: document needs a label");
    Model<T> grad = zeros_like(model);
    loss_and_gradient<T>(model, {&doc}, BatchOptions<T>{}, grad);
    if (corrupt) corrupt(grad);

    Model<T> probe = model;
    auto params = trainable_tensors(probe);
    auto grads = trainable_tensors(grad);
    Rng rng(opt.seed, Stream::sampling);
    GradCheckReport rep;
    rep.threshold = opt.threshold;
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& P = params[k];
      std::vector<std::size_t> coords(P.data.size());
      std::iota(coords.begin(), coords.end(), std::size_t{0});
      if (opt.max_coords_per_tensor && coords.size() > opt.max_coords_per_tensor) {
        rng.shuffle(coords);
        coords.resize(opt.max_coords_per_tensor);
        std::sort(coords.begin(), coords.end());
      }
      TensorCheck tc{P.name, coords.size(), 0.0, true};
      for (std::size_t i : coords) {
        const T orig = P.data[i];
        P.data[i] = orig + opt.eps;
        const double lp = document_loss(probe, doc);
        P.data[i] = orig - opt.eps;
        const double lm = document_loss(probe, doc);
        P.data[i] = orig;
        const double numeric = (lp - lm) / (2 * opt.eps);
        tc.max_rel_err = std::max(tc.max_rel_err, relative_error(grads[k].data[i], numeric));
      }
      tc.pass = tc.max_rel_err < opt.threshold;
      rep.max_rel_err = std::max(rep.max_rel_err, tc.max_rel_err);
      rep.pass = rep.pass && tc.pass;
      rep.tensors.push_back(std::move(tc));
    }
    return rep;
  }
}

}  // namespace rgem
