#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "navwam/optim.hpp"
#include "navwam/tensor.hpp"

namespace navwam {

enum class OpKind {
  Constant,
  Parameter,
  Matmul,
  MatmulNT,
  Add,
  Mul,
  Scale,
  Tanh,
  Gelu,
  Exp,
  Clip,
  Minimum,
  Softmax,
  LayerNorm,
  Embed,
  ConcatRows,
  ConcatCols,
  Slice,
  Mean,
  Sum,
  Mse,
  GaussianNll,
};

// Define-by-run reverse-mode tape. Ops execute eagerly; node insertion order
// is a topological order, so backward is a single reverse sweep visiting each
// node once. Every forward op raises NumericError if it produces a non-finite
// value. A tape is confined to one worker; parameter tensors are only read.
class Tape {
 public:
  int constant(Tensor t);
  // Registers a parameter leaf. Repeated requests for the same name return
  // the same node. trainable=false degrades it to a constant leaf.
  int parameter(const ParameterStore& store, const std::string& name,
                bool trainable = true);

  int matmul(int a, int b);
  int matmul_nt(int a, int b);  // a * b^T
  // b may share a's shape or be a 1 x n row broadcast over a's rows
  int add(int a, int b);
  int mul(int a, int b);
  int scale(int a, double c);
  int tanh_op(int a);
  int gelu(int a);
  int exp_op(int a);
  int clip(int a, double lo, double hi);
  int minimum(int a, int b);
  int softmax(int a);                          // row-wise
  int layer_norm(int x, int gain, int bias);   // row-wise, eps 1e-5
  int embed(int table, std::vector<int> idx);  // gather rows
  int concat_rows(const std::vector<int>& parts);
  int concat_cols(const std::vector<int>& parts);
  int slice(int a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1);
  int mean(int a);  // full reduction to 1 x 1
  int sum(int a);   // full reduction to 1 x 1
  int mse(int a, int b);
  // 0.5 * sum[((v - mu)/sigma)^2 + 2*log_std + log 2pi]; log_std may be a
  // 1 x n row broadcast over rows of mean/value.
  int gaussian_nll(int mean_node, int log_std, int value);

  const Tensor& value(int id) const { return nodes_[id].val; }
  const Tensor& grad(int id) const;

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. loss must be
  // scalar (std::invalid_argument otherwise).
  void backward(int loss);

  // Gradients for trainable parameters; names never touched by this tape get
  // zero tensors so unreachable parameters read as zero gradient.
  std::map<std::string, Tensor> parameter_gradients(const ParameterStore& store) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind op;
    int a = -1, b = -1, c = -1;
    Tensor val;
    Tensor grd;
    bool has_grad = false;
    double p0 = 0.0, p1 = 0.0;
    std::size_t r0 = 0, r1 = 0, c0 = 0, c1 = 0;
    std::vector<int> idx;
    std::string pname;
  };

  int push(Node n);
  Tensor& grad_buf(int id);

  std::vector<Node> nodes_;
  std::map<std::string, int> param_nodes_;
  bool ran_backward_ = false;
};

// --- gradient checking -------------------------------------------------

using LossBuilder = std::function<int(Tape&, ParameterStore&)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  double tol = 0.0;
  std::vector<GradCheckEntry> entries;
  bool passed() const {
    for (const auto& e : entries) {
      if (!(e.max_rel_err <= tol)) return false;
    }
    return true;
  }
};

std::map<std::string, Tensor> analytic_gradients(const LossBuilder& build,
                                                 ParameterStore& params);

// Central differences with step h against the supplied analytic gradients.
// Relative error uses denominator max(|a|, |n|, 1e-2) so near-zero gradients
// compare absolutely at 0.01 * tol.
GradCheckReport compare_with_finite_difference(
    const std::map<std::string, Tensor>& analytic, const LossBuilder& build,
    ParameterStore& params, double h, double tol);

GradCheckReport check_gradients(const LossBuilder& build, ParameterStore& params,
                                double h, double tol);

}  // namespace navwam
