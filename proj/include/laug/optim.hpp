#pragma once

#include <string>
#include <utility>

#include "laug/tensor.hpp"

namespace laug {

enum class OptKind { adam, sgd };

struct OptimConfig {
  OptKind kind = OptKind::adam;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First-order optimizer over named parameter tensors. Holds per-parameter
// moment accumulators and a step counter; plain-SGD mode skips the moments.
template <class S>
class Optimizer {
 public:
  Optimizer(OptimConfig cfg, std::vector<std::pair<std::string, Tensor<S>>> params)
      : cfg_(cfg) {
    slots_.reserve(params.size());
    for (auto& [name, p] : params) {
      Slot slot;
      slot.name = name;
      slot.param = p;
      if (cfg_.kind == OptKind::adam) {
        slot.m.assign(static_cast<std::size_t>(p.size()), S(0));
        slot.v.assign(static_cast<std::size_t>(p.size()), S(0));
      }
      slots_.push_back(std::move(slot));
    }
  }

  void step() {
    ++steps_;
    for (auto& slot : slots_) {
      if (!slot.param.has_grad())
        throw ValueError("optimizer: missing gradient for parameter '" + slot.name + "'");
      const auto& g = slot.param.grad();
      S* p = slot.param.mutable_data();
      if (cfg_.kind == OptKind::sgd) {
        const S lr = static_cast<S>(cfg_.lr);
        for (std::size_t i = 0; i < g.size(); ++i) p[i] -= lr * g[i];
      } else {
        const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
        const S corr1 = S(1) - static_cast<S>(std::pow(cfg_.beta1, static_cast<double>(steps_)));
        const S corr2 = S(1) - static_cast<S>(std::pow(cfg_.beta2, static_cast<double>(steps_)));
        const S lr = static_cast<S>(cfg_.lr);
        const S eps = static_cast<S>(cfg_.eps);
        for (std::size_t i = 0; i < g.size(); ++i) {
          slot.m[i] = b1 * slot.m[i] + (S(1) - b1) * g[i];
          slot.v[i] = b2 * slot.v[i] + (S(1) - b2) * g[i] * g[i];
          const S mhat = slot.m[i] / corr1;
          const S vhat = slot.v[i] / corr2;
          p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
      }
    }
  }

  void zero_grad() {
    for (auto& slot : slots_) slot.param.zero_grad();
  }

  std::int64_t step_count() const { return steps_; }
  const OptimConfig& config() const { return cfg_; }

 private:
  struct Slot {
    std::string name;
    Tensor<S> param;
    std::vector<S> m, v;
  };

  OptimConfig cfg_;
  std::vector<Slot> slots_;
  std::int64_t steps_ = 0;
};

}  // namespace laug
