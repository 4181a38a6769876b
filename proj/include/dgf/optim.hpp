#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dgf/nets.hpp"

namespace dgf {

/// Shared optimizer plumbing: a named list of parameter slots with per-slot
/// decay flags and moment buffers. L2 weight decay is added to the gradient
/// before the update, on convolution and linear weights only.
template <typename S>
struct OptimizerBase {
  struct Slot {
    std::string name;
    Tensor<S> param;
    bool decay;
    std::vector<S> m1;  // first moment (Adam) / squared average (RMSprop)
    std::vector<S> m2;  // second moment (Adam only)
  };

  std::string name;
  S lr = S(1e-4);
  S weight_decay = S(1e-4);
  S eps = S(1e-8);
  int64_t step_count = 0;
  std::vector<Slot> slots;

  void attach(const std::vector<typename ParamStore<S>::Entry>& entries, bool second_moment) {
    for (const auto& e : entries) {
      Slot s;
      s.name = e.name;
      s.param = e.tensor;
      s.decay = e.weight_decay;
      s.m1.assign(static_cast<size_t>(e.tensor.numel()), S(0));
      if (second_moment) s.m2.assign(static_cast<size_t>(e.tensor.numel()), S(0));
      slots.push_back(std::move(s));
    }
  }

  const Vec<S>& grad_of_slot(const Slot& s) const {
    if (!s.param.grad())
      throw UsageError("optimizer step with missing gradient for parameter " + s.name);
    return *s.param.grad();
  }

  void zero_grad() {
    for (auto& s : slots) s.param.zero_grad();
  }
};

/// Adam with bias correction (beta1 = 0.9, beta2 = 0.99 by default).
template <typename S>
struct Adam : OptimizerBase<S> {
  S beta1 = S(0.9);
  S beta2 = S(0.99);

  Adam() = default;
  Adam(std::string name_, const std::vector<typename ParamStore<S>::Entry>& entries) {
    this->name = std::move(name_);
    this->attach(entries, /*second_moment=*/true);
  }

  void step() {
    ++this->step_count;
    const S bc1 = S(1) - std::pow(beta1, static_cast<S>(this->step_count));
    const S bc2 = S(1) - std::pow(beta2, static_cast<S>(this->step_count));
    for (auto& s : this->slots) {
      const auto& g = this->grad_of_slot(s);
      auto& p = s.param.mutable_values();
      const S wd = s.decay ? this->weight_decay : S(0);
      for (size_t i = 0; i < p.size(); ++i) {
        const S gi = g[i] + wd * p[i];
        s.m1[i] = beta1 * s.m1[i] + (S(1) - beta1) * gi;
        s.m2[i] = beta2 * s.m2[i] + (S(1) - beta2) * gi * gi;
        const S mhat = s.m1[i] / bc1;
        const S vhat = s.m2[i] / bc2;
        p[i] -= this->lr * mhat / (std::sqrt(vhat) + this->eps);
      }
    }
  }
};

/// RMSprop with accumulated squared gradient (alpha = 0.99 by default).
template <typename S>
struct RmsProp : OptimizerBase<S> {
  S alpha = S(0.99);

  RmsProp() = default;
  RmsProp(std::string name_, const std::vector<typename ParamStore<S>::Entry>& entries) {
    this->name = std::move(name_);
    this->attach(entries, /*second_moment=*/false);
  }

  void step() {
    ++this->step_count;
    for (auto& s : this->slots) {
      const auto& g = this->grad_of_slot(s);
      auto& p = s.param.mutable_values();
      const S wd = s.decay ? this->weight_decay : S(0);
      for (size_t i = 0; i < p.size(); ++i) {
        const S gi = g[i] + wd * p[i];
        s.m1[i] = alpha * s.m1[i] + (S(1) - alpha) * gi * gi;
        p[i] -= this->lr * gi / std::sqrt(s.m1[i] + this->eps);
      }
    }
  }
};

}  // namespace dgf
