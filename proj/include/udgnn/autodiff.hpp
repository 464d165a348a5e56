#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape records every primitive in execution order; node inputs therefore
// always precede the node. backward() sweeps the nodes in reverse once,
// accumulating adjoints and finally adding parameter adjoints into
// Parameter::grad. A tape supports exactly one backward pass.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "udgnn/dataset.hpp"
#include "udgnn/graph.hpp"
#include "udgnn/rng.hpp"
#include "udgnn/tensor.hpp"

namespace udgnn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  std::int64_t step_count = 0;
  bool weight_decay_exempt = false;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool exempt = false)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.rows(), value.cols()),
        adam_m(value.rows(), value.cols()),
        adam_v(value.rows(), value.cols()),
        weight_decay_exempt(exempt) {}

  void zero_grad() { grad.fill(0.0); }
};

/// Handle to a tape node.
struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

  /// Adjoint dL/dv after backward(); a zero tensor when v did not reach the loss.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.size() ? n.grad : Tensor(n.value.rows(), n.value.cols());
  }

  /// Smallest |x| seen at any relu input; +inf when the tape has no relu.
  double relu_margin() const { return relu_margin_; }

  void set_spmm_threads(unsigned t) { spmm_threads_ = t; }

  Var constant(Tensor t) { return push(std::move(t), {}); }

  Var param(Parameter& p) {
    Var v = push(p.value, {});
    nodes_[v.id].param = &p;
    return v;
  }

  Var matmul(Var a, Var b) {
    Var out = push(udgnn::matmul(value(a), value(b)), {a, b});
    node(out).backward = [a, b](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      t.accumulate(a.id, matmul_nt(g, t.value(b)));
      t.accumulate(b.id, matmul_tn(t.value(a), g));
    };
    return out;
  }

  Var add(Var a, Var b) {
    Var out = push(value(a) + value(b), {a, b});
    node(out).backward = [a, b](Tape& t, std::size_t self) {
      t.accumulate(a.id, t.nodes_[self].grad);
      t.accumulate(b.id, t.nodes_[self].grad);
    };
    return out;
  }

  /// H + 1 b, with b a 1 x d row added to every row of H.
  Var add_bias(Var h, Var b) {
    const Tensor& hv = value(h);
    const Tensor& bv = value(b);
    if (bv.rows() != 1 || bv.cols() != hv.cols())
      throw std::invalid_argument("add_bias: bias " + bv.shape_string() + " does not fit " + hv.shape_string());
    Tensor r = hv;
    for (std::size_t i = 0; i < r.rows(); ++i) {
      auto row = r.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += bv[j];
    }
    Var out = push(std::move(r), {h, b});
    node(out).backward = [h, b](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      Tensor gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
      t.accumulate(h.id, g);
      t.accumulate(b.id, std::move(gb));
    };
    return out;
  }

  /// P H with P held constant. The operator must outlive the tape.
  Var spmm_const(const PropagationMatrix& p, Var h) {
    Var out = push(udgnn::spmm(p, value(h), spmm_threads_), {h});
    const PropagationMatrix* pt = p.symmetric() ? &p : transpose_of(p);
    node(out).backward = [pt, h](Tape& t, std::size_t self) {
      t.accumulate(h.id, udgnn::spmm(*pt, t.nodes_[self].grad, t.spmm_threads_));
    };
    return out;
  }

  /// gate * H for a 1 x 1 gate.
  Var scale_by_param(Var gate, Var h) {
    const Tensor& gv = value(gate);
    if (gv.rows() != 1 || gv.cols() != 1)
      throw std::invalid_argument("scale_by_param: gate must be 1x1, got " + gv.shape_string());
    Var out = push(gv[0] * value(h), {gate, h});
    node(out).backward = [gate, h](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      t.accumulate(gate.id, Tensor::scalar(frobenius_dot(g, t.value(h))));
      t.accumulate(h.id, t.value(gate)[0] * g);
    };
    return out;
  }

  Var relu(Var h) {
    Tensor r = value(h);
    for (double& x : r.data()) {
      relu_margin_ = std::min(relu_margin_, std::abs(x));
      x = x > 0.0 ? x : 0.0;
    }
    Var out = push(std::move(r), {h});
    node(out).backward = [h](Tape& t, std::size_t self) {
      Tensor g = t.nodes_[self].grad;
      const Tensor& x = t.value(h);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(x[i] > 0.0)) g[i] = 0.0;
      t.accumulate(h.id, std::move(g));
    };
    return out;
  }

  /// Inverted dropout. Identity (and no random draws) when not training or rate == 0.
  Var dropout(Var h, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
    if (!training || rate == 0.0) return h;
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor mask(value(h).rows(), value(h).cols());
    for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep_scale;
    Tensor r = value(h);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] *= mask[i];
    Var out = push(std::move(r), {h});
    node(out).backward = [h, mask = std::move(mask)](Tape& t, std::size_t self) {
      Tensor g = t.nodes_[self].grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
      t.accumulate(h.id, std::move(g));
    };
    return out;
  }

  Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
      cols += value(p).cols();
    }
    Tensor r(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& pv = value(p);
      for (std::size_t i = 0; i < rows; ++i)
        std::copy(pv.row(i).begin(), pv.row(i).end(), r.row(i).begin() + static_cast<std::ptrdiff_t>(off));
      off += pv.cols();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    Var out = push(std::move(r), inputs);
    node(out).backward = [inputs](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      std::size_t off = 0;
      for (Var p : inputs) {
        const std::size_t c = t.value(p).cols();
        Tensor gp(g.rows(), c);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) gp(i, j) = g(i, off + j);
        t.accumulate(p.id, std::move(gp));
        off += c;
      }
    };
    return out;
  }

  /// Mean over masked nodes of -log softmax(logits_i)[label_i].
  Var softmax_cross_entropy(Var logits, const std::vector<int>& labels, const Mask& mask) {
    const Tensor& z = value(logits);
    if (labels.size() != z.rows() || mask.size() != z.rows())
      throw std::invalid_argument("softmax_cross_entropy: labels/mask length does not match logits " +
                                  z.shape_string());
    const std::size_t count = mask_count(mask);
    if (count == 0) throw std::invalid_argument("softmax_cross_entropy: empty mask");
    Tensor probs(z.rows(), z.cols());
    double loss = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
      if (!mask[i]) continue;
      const auto zi = z.row(i);
      const double m = *std::max_element(zi.begin(), zi.end());
      double s = 0.0;
      for (std::size_t c = 0; c < zi.size(); ++c) s += std::exp(zi[c] - m);
      const double log_s = std::log(s);
      for (std::size_t c = 0; c < zi.size(); ++c) probs(i, c) = std::exp(zi[c] - m - log_s);
      const auto y = static_cast<std::size_t>(labels[i]);
      if (y >= zi.size()) throw std::invalid_argument("softmax_cross_entropy: label out of range");
      loss -= zi[y] - m - log_s;
    }
    loss /= static_cast<double>(count);
    if (!std::isfinite(loss)) throw std::runtime_error("softmax_cross_entropy: non-finite loss");
    Var out = push(Tensor::scalar(loss), {logits});
    node(out).backward = [logits, labels, mask, probs = std::move(probs), count](Tape& t, std::size_t self) {
      const double g = t.nodes_[self].grad[0] / static_cast<double>(count);
      Tensor d = probs;
      for (std::size_t i = 0; i < d.rows(); ++i) {
        if (!mask[i]) continue;
        d(i, static_cast<std::size_t>(labels[i])) -= 1.0;
        for (double& x : d.row(i)) x *= g;
      }
      t.accumulate(logits.id, std::move(d));
    };
    return out;
  }

  Var sum(Var h) {
    double s = 0.0;
    for (double x : value(h).data()) s += x;
    Var out = push(Tensor::scalar(s), {h});
    node(out).backward = [h](Tape& t, std::size_t self) {
      const Tensor& hv = t.value(h);
      t.accumulate(h.id, Tensor(hv.rows(), hv.cols(), t.nodes_[self].grad[0]));
    };
    return out;
  }

  /// Sum of squared entries.
  Var sum_squares(Var h) {
    double s = 0.0;
    for (double x : value(h).data()) s += x * x;
    Var out = push(Tensor::scalar(s), {h});
    node(out).backward = [h](Tape& t, std::size_t self) {
      t.accumulate(h.id, (2.0 * t.nodes_[self].grad[0]) * t.value(h));
    };
    return out;
  }

  /// Reverse sweep from a scalar node. Zeroes and then fills Parameter::grad
  /// for every parameter recorded on this tape.
  void backward(Var loss) {
    if (backward_done_) throw std::logic_error("Tape::backward called twice on the same tape");
    if (value(loss).size() != 1) throw std::invalid_argument("Tape::backward: loss must be scalar");
    backward_done_ = true;
    for (auto& n : nodes_)
      if (n.param) n.param->zero_grad();
    nodes_[loss.id].grad = Tensor::scalar(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad.size()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) n.param->grad += n.grad;
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Var> inputs;
    std::function<void(Tape&, std::size_t)> backward;
    Parameter* param = nullptr;
  };

  Var push(Tensor value, std::vector<Var> inputs) {
    for (Var in : inputs)
      if (in.id >= nodes_.size()) throw std::logic_error("Tape: input refers to a node that does not exist");
    nodes_.push_back(Node{std::move(value), {}, std::move(inputs), {}, nullptr});
    return Var{nodes_.size() - 1};
  }

  Node& node(Var v) { return nodes_[v.id]; }

  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.grad.size()) n.grad = g;
    else n.grad += g;
  }
  void accumulate(std::size_t id, Tensor&& g) {
    Node& n = nodes_[id];
    if (!n.grad.size()) n.grad = std::move(g);
    else n.grad += g;
  }

  const PropagationMatrix* transpose_of(const PropagationMatrix& p) {
    auto& slot = transposes_[&p];
    if (!slot) slot = std::make_unique<PropagationMatrix>(p.transposed());
    return slot.get();
  }

  std::vector<Node> nodes_;
  std::map<const PropagationMatrix*, std::unique_ptr<PropagationMatrix>> transposes_;
  double relu_margin_ = std::numeric_limits<double>::infinity();
  unsigned spmm_threads_ = 1;
  bool backward_done_ = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_parameter = 0;
  std::size_t worst_coordinate = 0;
  std::size_t coordinates_checked = 0;
};

/// Compares tape gradients against central differences
/// (L(w+eps) - L(w-eps)) / 2eps for every scalar coordinate of every
/// parameter. Relative error uses max(1, |analytic|) as the denominator.
/// `build_loss` must record a scalar loss on the given tape and be a
/// deterministic function of the parameter values.
inline GradCheckResult grad_check(const std::function<Var(Tape&)>& build_loss, std::span<Parameter* const> params,
                                  double eps) {
  if (!(eps >= 1e-8 && eps <= 1e-4)) throw std::invalid_argument("grad_check: epsilon must lie in [1e-8, 1e-4]");
  std::vector<Tensor> analytic;
  {
    Tape tape;
    Var loss = build_loss(tape);
    tape.backward(loss);
    for (Parameter* p : params) analytic.push_back(p->grad);
  }
  auto eval = [&]() {
    Tape tape;
    const double l = tape.value(build_loss(tape)).item();
    if (!std::isfinite(l)) throw std::runtime_error("grad_check: non-finite loss during perturbation");
    return l;
  };
  GradCheckResult r;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& w = params[pi]->value;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double orig = w[k];
      w[k] = orig + eps;
      const double up = eval();
      w[k] = orig - eps;
      const double down = eval();
      w[k] = orig;
      const double fd = (up - down) / (2.0 * eps);
      const double a = analytic[pi][k];
      const double err = std::abs(fd - a) / std::max(1.0, std::abs(a));
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst_parameter = pi;
        r.worst_coordinate = k;
      }
      ++r.coordinates_checked;
    }
  }
  return r;
}

}  // namespace udgnn
