#include "navwam/optim.hpp"

#include <cmath>

#include "navwam/errors.hpp"

namespace navwam {

double global_grad_norm(const GradMap& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.d) sq += v * v;
  }
  return std::sqrt(sq);
}

double clip_global_norm(GradMap& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (norm <= max_norm || norm == 0.0) return 1.0;
  const double scale = max_norm / norm;
  for (auto& [name, g] : grads) {
    for (double& v : g.d) v *= scale;
  }
  return scale;
}

void adam_step(ParameterStore& store, const GradMap& grads, double lr,
               double beta1, double beta2, double eps) {
  store.step += 1;
  const double t = static_cast<double>(store.step);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (const auto& [name, g] : grads) {
    auto pit = store.params.find(name);
    if (pit == store.params.end()) {
      throw ShapeError("adam_step: gradient for unknown parameter " + name);
    }
    Tensor& p = pit->second;
    if (!p.same_shape(g)) {
      throw ShapeError("adam_step: gradient shape mismatch for " + name);
    }
    Tensor& m = store.m.try_emplace(name, p.rows, p.cols).first->second;
    Tensor& v = store.v.try_emplace(name, p.rows, p.cols).first->second;
    if (!m.same_shape(p) || !v.same_shape(p)) {
      throw ShapeError("adam_step: moment shape mismatch for " + name);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.d[i] = beta1 * m.d[i] + (1.0 - beta1) * g.d[i];
      v.d[i] = beta2 * v.d[i] + (1.0 - beta2) * g.d[i] * g.d[i];
      const double mh = m.d[i] / bc1;
      const double vh = v.d[i] / bc2;
      p.d[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

void accumulate(GradMap& a, const GradMap& b) {
  for (const auto& [name, g] : b) {
    auto it = a.find(name);
    if (it == a.end()) {
      a[name] = g;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) it->second.d[i] += g.d[i];
    }
  }
}

}  // namespace navwam
