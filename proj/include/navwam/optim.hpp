#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "navwam/tensor.hpp"

namespace navwam {

// Named parameters plus Adam moment buffers. Copying makes a deep snapshot
// (used for policy old/reference copies).
struct ParameterStore {
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::uint64_t step = 0;
  std::set<std::string> frozen;

  bool trainable(const std::string& name) const {
    return frozen.find(name) == frozen.end();
  }
  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [k, t] : params) {
      if (trainable(k)) out.push_back(k);
    }
    return out;
  }
};

using GradMap = std::map<std::string, Tensor>;

// Scales all gradients by max_norm/g when the global L2 norm g exceeds
// max_norm; returns the applied scale (1.0 otherwise, including for all-zero
// gradients).
double clip_global_norm(GradMap& grads, double max_norm);

double global_grad_norm(const GradMap& grads);

// Adam with bias correction; updates only names present in grads, increments
// the step counter once. Shape mismatch raises ShapeError.
void adam_step(ParameterStore& store, const GradMap& grads, double lr,
               double beta1, double beta2, double eps);

// a += b elementwise over matching names/shapes (grad accumulation).
void accumulate(GradMap& a, const GradMap& b);

}  // namespace navwam
