#include "navwam/graph.hpp"

#include <cmath>
#include <stdexcept>

#include "navwam/errors.hpp"
#include "navwam/kernels.hpp"

namespace navwam {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

void require(bool ok, const char* msg) {
  if (!ok) throw ShapeError(msg);
}

bool row_broadcast(const Tensor& a, const Tensor& b) {
  return b.rows == 1 && b.cols == a.cols && a.rows >= 1;
}
}  // namespace

int Tape::push(Node n) {
  if (!all_finite(n.val)) {
    throw NumericError("forward op produced a non-finite value");
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::constant(Tensor t) {
  Node n;
  n.op = OpKind::Constant;
  n.val = std::move(t);
  return push(std::move(n));
}

int Tape::parameter(const ParameterStore& store, const std::string& name,
                    bool trainable) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return it->second;
  auto pit = store.params.find(name);
  if (pit == store.params.end()) {
    throw std::invalid_argument("unknown parameter: " + name);
  }
  Node n;
  n.op = (trainable && store.trainable(name)) ? OpKind::Parameter : OpKind::Constant;
  n.val = pit->second;
  n.pname = name;
  const int id = push(std::move(n));
  param_nodes_[name] = id;
  return id;
}

int Tape::matmul(int a, int b) {
  Node n;
  n.op = OpKind::Matmul;
  n.a = a;
  n.b = b;
  kernels::matmul(nodes_[a].val, nodes_[b].val, n.val);
  return push(std::move(n));
}

int Tape::matmul_nt(int a, int b) {
  Node n;
  n.op = OpKind::MatmulNT;
  n.a = a;
  n.b = b;
  kernels::matmul_nt(nodes_[a].val, nodes_[b].val, n.val);
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  const Tensor& ta = nodes_[a].val;
  const Tensor& tb = nodes_[b].val;
  require(ta.same_shape(tb) || row_broadcast(ta, tb), "add: shape mismatch");
  Node n;
  n.op = OpKind::Add;
  n.a = a;
  n.b = b;
  n.val = ta;
  if (ta.same_shape(tb)) {
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val.d[i] += tb.d[i];
  } else {
    for (std::size_t i = 0; i < ta.rows; ++i) {
      for (std::size_t j = 0; j < ta.cols; ++j) n.val.at(i, j) += tb.d[j];
    }
  }
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  const Tensor& ta = nodes_[a].val;
  const Tensor& tb = nodes_[b].val;
  require(ta.same_shape(tb) || row_broadcast(ta, tb), "mul: shape mismatch");
  Node n;
  n.op = OpKind::Mul;
  n.a = a;
  n.b = b;
  n.val = ta;
  if (ta.same_shape(tb)) {
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val.d[i] *= tb.d[i];
  } else {
    for (std::size_t i = 0; i < ta.rows; ++i) {
      for (std::size_t j = 0; j < ta.cols; ++j) n.val.at(i, j) *= tb.d[j];
    }
  }
  return push(std::move(n));
}

int Tape::scale(int a, double c) {
  Node n;
  n.op = OpKind::Scale;
  n.a = a;
  n.p0 = c;
  n.val = nodes_[a].val;
  for (double& v : n.val.d) v *= c;
  return push(std::move(n));
}

int Tape::tanh_op(int a) {
  Node n;
  n.op = OpKind::Tanh;
  n.a = a;
  n.val = nodes_[a].val;
  for (double& v : n.val.d) v = std::tanh(v);
  return push(std::move(n));
}

int Tape::gelu(int a) {
  Node n;
  n.op = OpKind::Gelu;
  n.a = a;
  n.val = nodes_[a].val;
  for (double& v : n.val.d) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return push(std::move(n));
}

int Tape::exp_op(int a) {
  Node n;
  n.op = OpKind::Exp;
  n.a = a;
  n.val = nodes_[a].val;
  for (double& v : n.val.d) v = std::exp(v);
  return push(std::move(n));
}

int Tape::clip(int a, double lo, double hi) {
  Node n;
  n.op = OpKind::Clip;
  n.a = a;
  n.p0 = lo;
  n.p1 = hi;
  n.val = nodes_[a].val;
  for (double& v : n.val.d) v = v < lo ? lo : (v > hi ? hi : v);
  return push(std::move(n));
}

int Tape::minimum(int a, int b) {
  const Tensor& ta = nodes_[a].val;
  const Tensor& tb = nodes_[b].val;
  require(ta.same_shape(tb), "minimum: shape mismatch");
  Node n;
  n.op = OpKind::Minimum;
  n.a = a;
  n.b = b;
  n.val = ta;
  for (std::size_t i = 0; i < n.val.size(); ++i) {
    n.val.d[i] = ta.d[i] <= tb.d[i] ? ta.d[i] : tb.d[i];
  }
  return push(std::move(n));
}

int Tape::softmax(int a) {
  const Tensor& ta = nodes_[a].val;
  Node n;
  n.op = OpKind::Softmax;
  n.a = a;
  n.val = Tensor(ta.rows, ta.cols);
  for (std::size_t i = 0; i < ta.rows; ++i) {
    double mx = ta.at(i, 0);
    for (std::size_t j = 1; j < ta.cols; ++j) mx = std::max(mx, ta.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < ta.cols; ++j) {
      const double e = std::exp(ta.at(i, j) - mx);
      n.val.at(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < ta.cols; ++j) n.val.at(i, j) /= denom;
  }
  return push(std::move(n));
}

int Tape::layer_norm(int x, int gain, int bias) {
  const Tensor& tx = nodes_[x].val;
  const Tensor& tg = nodes_[gain].val;
  const Tensor& tb = nodes_[bias].val;
  require(row_broadcast(tx, tg) && row_broadcast(tx, tb),
          "layer_norm: gain/bias must be 1 x cols");
  Node n;
  n.op = OpKind::LayerNorm;
  n.a = x;
  n.b = gain;
  n.c = bias;
  n.val = Tensor(tx.rows, tx.cols);
  for (std::size_t i = 0; i < tx.rows; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < tx.cols; ++j) mu += tx.at(i, j);
    mu /= static_cast<double>(tx.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < tx.cols; ++j) {
      const double dv = tx.at(i, j) - mu;
      var += dv * dv;
    }
    var /= static_cast<double>(tx.cols);
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    for (std::size_t j = 0; j < tx.cols; ++j) {
      n.val.at(i, j) = tg.d[j] * (tx.at(i, j) - mu) * inv + tb.d[j];
    }
  }
  return push(std::move(n));
}

int Tape::embed(int table, std::vector<int> idx) {
  const Tensor& tt = nodes_[table].val;
  Node n;
  n.op = OpKind::Embed;
  n.a = table;
  n.idx = std::move(idx);
  n.val = Tensor(n.idx.size(), tt.cols);
  for (std::size_t r = 0; r < n.idx.size(); ++r) {
    const int row = n.idx[r];
    if (row < 0 || static_cast<std::size_t>(row) >= tt.rows) {
      throw VocabError("embed: index out of table range");
    }
    for (std::size_t j = 0; j < tt.cols; ++j) {
      n.val.at(r, j) = tt.at(static_cast<std::size_t>(row), j);
    }
  }
  return push(std::move(n));
}

int Tape::concat_rows(const std::vector<int>& parts) {
  require(!parts.empty(), "concat_rows: empty part list");
  const std::size_t cols = nodes_[parts[0]].val.cols;
  std::size_t rows = 0;
  for (int p : parts) {
    require(nodes_[p].val.cols == cols, "concat_rows: column mismatch");
    rows += nodes_[p].val.rows;
  }
  Node n;
  n.op = OpKind::ConcatRows;
  n.idx = parts;
  n.val = Tensor(rows, cols);
  std::size_t r = 0;
  for (int p : parts) {
    const Tensor& t = nodes_[p].val;
    std::copy(t.d.begin(), t.d.end(), n.val.d.begin() + r * cols);
    r += t.rows;
  }
  return push(std::move(n));
}

int Tape::concat_cols(const std::vector<int>& parts) {
  require(!parts.empty(), "concat_cols: empty part list");
  const std::size_t rows = nodes_[parts[0]].val.rows;
  std::size_t cols = 0;
  for (int p : parts) {
    require(nodes_[p].val.rows == rows, "concat_cols: row mismatch");
    cols += nodes_[p].val.cols;
  }
  Node n;
  n.op = OpKind::ConcatCols;
  n.idx = parts;
  n.val = Tensor(rows, cols);
  std::size_t c = 0;
  for (int p : parts) {
    const Tensor& t = nodes_[p].val;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < t.cols; ++j) n.val.at(i, c + j) = t.at(i, j);
    }
    c += t.cols;
  }
  return push(std::move(n));
}

int Tape::slice(int a, std::size_t r0, std::size_t r1, std::size_t c0,
                std::size_t c1) {
  const Tensor& ta = nodes_[a].val;
  require(r0 < r1 && r1 <= ta.rows && c0 < c1 && c1 <= ta.cols,
          "slice: range out of bounds");
  Node n;
  n.op = OpKind::Slice;
  n.a = a;
  n.r0 = r0;
  n.r1 = r1;
  n.c0 = c0;
  n.c1 = c1;
  n.val = Tensor(r1 - r0, c1 - c0);
  for (std::size_t i = r0; i < r1; ++i) {
    for (std::size_t j = c0; j < c1; ++j) n.val.at(i - r0, j - c0) = ta.at(i, j);
  }
  return push(std::move(n));
}

int Tape::mean(int a) {
  const Tensor& ta = nodes_[a].val;
  require(ta.size() > 0, "mean: empty tensor");
  Node n;
  n.op = OpKind::Mean;
  n.a = a;
  n.val = Tensor(1, 1);
  double acc = 0.0;
  for (double v : ta.d) acc += v;
  n.val.d[0] = acc / static_cast<double>(ta.size());
  return push(std::move(n));
}

int Tape::sum(int a) {
  Node n;
  n.op = OpKind::Sum;
  n.a = a;
  n.val = Tensor(1, 1);
  double acc = 0.0;
  for (double v : nodes_[a].val.d) acc += v;
  n.val.d[0] = acc;
  return push(std::move(n));
}

int Tape::mse(int a, int b) {
  const Tensor& ta = nodes_[a].val;
  const Tensor& tb = nodes_[b].val;
  require(ta.same_shape(tb), "mse: shape mismatch");
  Node n;
  n.op = OpKind::Mse;
  n.a = a;
  n.b = b;
  n.val = Tensor(1, 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const double dv = ta.d[i] - tb.d[i];
    acc += dv * dv;
  }
  n.val.d[0] = acc / static_cast<double>(ta.size());
  return push(std::move(n));
}

int Tape::gaussian_nll(int mean_node, int log_std, int value) {
  const Tensor& tm = nodes_[mean_node].val;
  const Tensor& ts = nodes_[log_std].val;
  const Tensor& tv = nodes_[value].val;
  require(tm.same_shape(tv), "gaussian_nll: mean/value shape mismatch");
  require(tm.same_shape(ts) || row_broadcast(tm, ts),
          "gaussian_nll: log_std must match or row-broadcast");
  Node n;
  n.op = OpKind::GaussianNll;
  n.a = mean_node;
  n.b = log_std;
  n.c = value;
  n.val = Tensor(1, 1);
  double acc = 0.0;
  const bool bc = !tm.same_shape(ts);
  for (std::size_t i = 0; i < tm.rows; ++i) {
    for (std::size_t j = 0; j < tm.cols; ++j) {
      const double s = bc ? ts.d[j] : ts.at(i, j);
      const double e = (tv.at(i, j) - tm.at(i, j)) * std::exp(-s);
      acc += 0.5 * e * e + s + 0.5 * kLog2Pi;
    }
  }
  n.val.d[0] = acc;
  return push(std::move(n));
}

const Tensor& Tape::grad(int id) const {
  if (!ran_backward_) throw std::logic_error("grad requested before backward");
  return nodes_[id].grd;
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grd = Tensor(n.val.rows, n.val.cols);
    n.has_grad = true;
  }
  return n.grd;
}

void Tape::backward(int loss) {
  const Tensor& lv = nodes_[loss].val;
  if (lv.rows != 1 || lv.cols != 1) {
    throw std::invalid_argument("backward: loss must be scalar");
  }
  grad_buf(loss).d[0] = 1.0;
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    const Tensor& g = n.grd;
    switch (n.op) {
      case OpKind::Constant:
      case OpKind::Parameter:
        break;
      case OpKind::Matmul: {
        Tensor ga, gb;
        kernels::matmul_nt(g, nodes_[n.b].val, ga);
        kernels::matmul_tn(nodes_[n.a].val, g, gb);
        Tensor& ba = grad_buf(n.a);
        for (std::size_t i = 0; i < ba.size(); ++i) ba.d[i] += ga.d[i];
        Tensor& bb = grad_buf(n.b);
        for (std::size_t i = 0; i < bb.size(); ++i) bb.d[i] += gb.d[i];
        break;
      }
      case OpKind::MatmulNT: {
        Tensor ga, gb;
        kernels::matmul(g, nodes_[n.b].val, ga);
        kernels::matmul_tn(g, nodes_[n.a].val, gb);
        Tensor& ba = grad_buf(n.a);
        for (std::size_t i = 0; i < ba.size(); ++i) ba.d[i] += ga.d[i];
        Tensor& bb = grad_buf(n.b);
        for (std::size_t i = 0; i < bb.size(); ++i) bb.d[i] += gb.d[i];
        break;
      }
      case OpKind::Add: {
        Tensor& ba = grad_buf(n.a);
        for (std::size_t i = 0; i < ba.size(); ++i) ba.d[i] += g.d[i];
        Tensor& bb = grad_buf(n.b);
        if (bb.same_shape(g)) {
          for (std::size_t i = 0; i < bb.size(); ++i) bb.d[i] += g.d[i];
        } else {
          for (std::size_t i = 0; i < g.rows; ++i) {
            for (std::size_t j = 0; j < g.cols; ++j) bb.d[j] += g.at(i, j);
          }
        }
        break;
      }
      case OpKind::Mul: {
        const Tensor& ta = nodes_[n.a].val;
        const Tensor& tb = nodes_[n.b].val;
        Tensor& ba = grad_buf(n.a);
        Tensor& bb = grad_buf(n.b);
        if (ta.same_shape(tb)) {
          for (std::size_t i = 0; i < ba.size(); ++i) ba.d[i] += g.d[i] * tb.d[i];
          for (std::size_t i = 0; i < bb.size(); ++i) bb.d[i] += g.d[i] * ta.d[i];
        } else {
          for (std::size_t i = 0; i < g.rows; ++i) {
            for (std::size_t j = 0; j < g.cols; ++j) {
              ba.at(i, j) += g.at(i, j) * tb.d[j];
              bb.d[j] += g.at(i, j) * ta.at(i, j);
            }
          }
        }
        break;
      }
      case OpKind::Scale: {
        Tensor& ba = grad_buf(n.a);
        for (std::size_t i = 0; i < ba.size(); ++i) ba.d[i] += n.p0 * g.d[i];
        break;
      }
      case OpKind::Tanh: {
        Tensor& ba = grad_buf(n.a);
        for (std::size_t i = 0; i < ba.size(); ++i) {
          ba.d[i] += g.d[i] * (1.0 - n.val.d[i] * n.val.d[i]);
        }
        break;
      }
      case OpKind::Gelu: {
        const Tensor& tx = nodes_[n.a].val;
        Tensor& ba = grad_buf(n.a);
        for (std::size_t i = 0; i < ba.size(); ++i) {
          const double x = tx.d[i];
          const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
          ba.d[i] += g.d[i] * (phi + x * pdf);
        }
        break;
      }
      case OpKind::Exp: {
        Tensor& ba = grad_buf(n.a);
        for (std::size_t i = 0; i < ba.size(); ++i) ba.d[i] += g.d[i] * n.val.d[i];
        break;
      }
      case OpKind::Clip: {
        const Tensor& tx = nodes_[n.a].val;
        Tensor& ba = grad_buf(n.a);
        for (std::size_t i = 0; i < ba.size(); ++i) {
          if (tx.d[i] >= n.p0 && tx.d[i] <= n.p1) ba.d[i] += g.d[i];
        }
        break;
      }
      case OpKind::Minimum: {
        const Tensor& ta = nodes_[n.a].val;
        const Tensor& tb = nodes_[n.b].val;
        Tensor& ba = grad_buf(n.a);
        Tensor& bb = grad_buf(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (ta.d[i] <= tb.d[i]) {
            ba.d[i] += g.d[i];
          } else {
            bb.d[i] += g.d[i];
          }
        }
        break;
      }
      case OpKind::Softmax: {
        Tensor& ba = grad_buf(n.a);
        for (std::size_t i = 0; i < g.rows; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < g.cols; ++j) dot += g.at(i, j) * n.val.at(i, j);
          for (std::size_t j = 0; j < g.cols; ++j) {
            ba.at(i, j) += n.val.at(i, j) * (g.at(i, j) - dot);
          }
        }
        break;
      }
      case OpKind::LayerNorm: {
        const Tensor& tx = nodes_[n.a].val;
        const Tensor& tg = nodes_[n.b].val;
        Tensor& bx = grad_buf(n.a);
        Tensor& bg = grad_buf(n.b);
        Tensor& bb = grad_buf(n.c);
        const double cols = static_cast<double>(tx.cols);
        for (std::size_t i = 0; i < tx.rows; ++i) {
          double mu = 0.0;
          for (std::size_t j = 0; j < tx.cols; ++j) mu += tx.at(i, j);
          mu /= cols;
          double var = 0.0;
          for (std::size_t j = 0; j < tx.cols; ++j) {
            const double dv = tx.at(i, j) - mu;
            var += dv * dv;
          }
          var /= cols;
          const double inv = 1.0 / std::sqrt(var + kLnEps);
          double mh = 0.0, mhy = 0.0;
          std::vector<double> yh(tx.cols), h(tx.cols);
          for (std::size_t j = 0; j < tx.cols; ++j) {
            yh[j] = (tx.at(i, j) - mu) * inv;
            h[j] = g.at(i, j) * tg.d[j];
            mh += h[j];
            mhy += h[j] * yh[j];
          }
          mh /= cols;
          mhy /= cols;
          for (std::size_t j = 0; j < tx.cols; ++j) {
            bx.at(i, j) += (h[j] - mh - yh[j] * mhy) * inv;
            bg.d[j] += g.at(i, j) * yh[j];
            bb.d[j] += g.at(i, j);
          }
        }
        break;
      }
      case OpKind::Embed: {
        Tensor& bt = grad_buf(n.a);
        for (std::size_t r = 0; r < n.idx.size(); ++r) {
          const std::size_t row = static_cast<std::size_t>(n.idx[r]);
          for (std::size_t j = 0; j < g.cols; ++j) bt.at(row, j) += g.at(r, j);
        }
        break;
      }
      case OpKind::ConcatRows: {
        std::size_t r = 0;
        for (int p : n.idx) {
          Tensor& bp = grad_buf(p);
          for (std::size_t i = 0; i < bp.rows; ++i) {
            for (std::size_t j = 0; j < bp.cols; ++j) bp.at(i, j) += g.at(r + i, j);
          }
          r += bp.rows;
        }
        break;
      }
      case OpKind::ConcatCols: {
        std::size_t c = 0;
        for (int p : n.idx) {
          Tensor& bp = grad_buf(p);
          for (std::size_t i = 0; i < bp.rows; ++i) {
            for (std::size_t j = 0; j < bp.cols; ++j) bp.at(i, j) += g.at(i, c + j);
          }
          c += bp.cols;
        }
        break;
      }
      case OpKind::Slice: {
        Tensor& ba = grad_buf(n.a);
        for (std::size_t i = n.r0; i < n.r1; ++i) {
          for (std::size_t j = n.c0; j < n.c1; ++j) {
            ba.at(i, j) += g.at(i - n.r0, j - n.c0);
          }
        }
        break;
      }
      case OpKind::Mean: {
        Tensor& ba = grad_buf(n.a);
        const double w = g.d[0] / static_cast<double>(ba.size());
        for (double& v : ba.d) v += w;
        break;
      }
      case OpKind::Sum: {
        Tensor& ba = grad_buf(n.a);
        for (double& v : ba.d) v += g.d[0];
        break;
      }
      case OpKind::Mse: {
        const Tensor& ta = nodes_[n.a].val;
        const Tensor& tb = nodes_[n.b].val;
        Tensor& ba = grad_buf(n.a);
        Tensor& bb = grad_buf(n.b);
        const double w = 2.0 * g.d[0] / static_cast<double>(ta.size());
        for (std::size_t i = 0; i < ta.size(); ++i) {
          const double dv = w * (ta.d[i] - tb.d[i]);
          ba.d[i] += dv;
          bb.d[i] -= dv;
        }
        break;
      }
      case OpKind::GaussianNll: {
        const Tensor& tm = nodes_[n.a].val;
        const Tensor& ts = nodes_[n.b].val;
        const Tensor& tv = nodes_[n.c].val;
        Tensor& bm = grad_buf(n.a);
        Tensor& bs = grad_buf(n.b);
        Tensor& bv = grad_buf(n.c);
        const bool bc = !tm.same_shape(ts);
        const double g0 = g.d[0];
        for (std::size_t i = 0; i < tm.rows; ++i) {
          for (std::size_t j = 0; j < tm.cols; ++j) {
            const double s = bc ? ts.d[j] : ts.at(i, j);
            const double inv2 = std::exp(-2.0 * s);
            const double diff = tv.at(i, j) - tm.at(i, j);
            bm.at(i, j) += g0 * (-diff) * inv2;
            bv.at(i, j) += g0 * diff * inv2;
            const double gs = g0 * (1.0 - diff * diff * inv2);
            if (bc) {
              bs.d[j] += gs;
            } else {
              bs.at(i, j) += gs;
            }
          }
        }
        break;
      }
    }
  }
  ran_backward_ = true;
}

std::map<std::string, Tensor> Tape::parameter_gradients(
    const ParameterStore& store) const {
  if (!ran_backward_) throw std::logic_error("parameter_gradients before backward");
  std::map<std::string, Tensor> out;
  for (const std::string& name : store.trainable_names()) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end() && nodes_[it->second].op == OpKind::Parameter &&
        nodes_[it->second].has_grad) {
      out[name] = nodes_[it->second].grd;
    } else {
      const Tensor& p = store.params.at(name);
      out[name] = Tensor(p.rows, p.cols);
    }
  }
  return out;
}

// --- gradient checking -------------------------------------------------

std::map<std::string, Tensor> analytic_gradients(const LossBuilder& build,
                                                 ParameterStore& params) {
  Tape tape;
  const int loss = build(tape, params);
  tape.backward(loss);
  return tape.parameter_gradients(params);
}

GradCheckReport compare_with_finite_difference(
    const std::map<std::string, Tensor>& analytic, const LossBuilder& build,
    ParameterStore& params, double h, double tol) {
  GradCheckReport report;
  report.tol = tol;
  auto eval_loss = [&]() {
    Tape tape;
    const int loss = build(tape, params);
    return tape.value(loss).d[0];
  };
  for (const std::string& name : params.trainable_names()) {
    Tensor& p = params.params.at(name);
    const auto it = analytic.find(name);
    GradCheckEntry entry;
    entry.name = name;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p.d[i];
      p.d[i] = keep + h;
      const double up = eval_loss();
      p.d[i] = keep - h;
      const double dn = eval_loss();
      p.d[i] = keep;
      const double num = (up - dn) / (2.0 * h);
      const double ana = it == analytic.end() ? 0.0 : it->second.d[i];
      const double denom = std::max({std::abs(num), std::abs(ana), 1e-2});
      entry.max_rel_err = std::max(entry.max_rel_err, std::abs(num - ana) / denom);
    }
    report.entries.push_back(entry);
  }
  return report;
}

GradCheckReport check_gradients(const LossBuilder& build, ParameterStore& params,
                                double h, double tol) {
  const auto analytic = analytic_gradients(build, params);
  return compare_with_finite_difference(analytic, build, params, h, tol);
}

}  // namespace navwam
