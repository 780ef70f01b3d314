#include "dsmil/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dsmil/error.hpp"
#include "dsmil/kernels.hpp"

namespace dsmil {

namespace {

using NodePtr = std::shared_ptr<detail::TensorNode>;

std::vector<double>& grad_of(detail::TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
  return n.grad;
}

std::string shape_of(const Tensor& t) { return t.shape_string(); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
  }
}

void require_non_empty(const char* op, const Tensor& x) {
  if (x.empty()) throw ShapeError(std::string(op) + ": empty tensor " + shape_of(x));
}

double clamp_prob(double p) { return std::clamp(p, kLogEpsilon, 1.0 - kLogEpsilon); }

}  // namespace

// --- Tensor ---------------------------------------------------------------

Tensor::Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : node_(std::make_shared<detail::TensorNode>()) {
  node_->rows = rows;
  node_->cols = cols;
  node_->values.assign(rows * cols, fill);
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : node_(std::make_shared<detail::TensorNode>()) {
  if (values.size() != rows * cols) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  node_->rows = rows;
  node_->cols = cols;
  node_->values = std::move(values);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("tensor: ragged initializer rows");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(v));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
  Tensor t(rows, cols, std::move(values));
  t.set_requires_grad(true);
  return t;
}

std::string Tensor::shape_string() const {
  return std::to_string(rows()) + "x" + std::to_string(cols());
}

std::span<const double> Tensor::row(std::size_t i) const {
  return std::span<const double>(node_->values).subspan(i * cols(), cols());
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("tensor: item() on " + shape_string());
  return node_->values[0];
}

void Tensor::zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

Tensor Tensor::detach() const { return Tensor(rows(), cols(), node_->values); }

// --- Tape -----------------------------------------------------------------

Tensor Tape::record(Tensor out, std::initializer_list<const Tensor*> inputs,
                    std::function<void(const std::vector<double>&)> propagate) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor* t) { return t->requires_grad(); });
  if (!needs) return out;
  if (consumed_) throw TapeError("tape: cannot record after backward()");
  out.set_requires_grad(true);
  ops_.push_back(Op{out.node_, std::move(propagate)});
  return out;
}

bool Tape::contains(const Tensor& t) const {
  return std::any_of(ops_.begin(), ops_.end(), [&](const Op& op) { return op.output == t.node_; });
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_of(a) + " * " + shape_of(b));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(m, n);
  const auto& kt = kernels::active();
  kernels::gemm_nn(kt, m, k, n, a.values().data(), b.values().data(), out.mutable_values().data());
  NodePtr an = a.node_, bn = b.node_;
  return record(out, {&a, &b}, [an, bn, m, k, n](const std::vector<double>& g) {
    const auto& kt = kernels::active();
    if (an->requires_grad) {
      // dA = G * B^T
      kernels::gemm_nt(kt, m, n, k, g.data(), bn->values.data(), grad_of(*an).data());
    }
    if (bn->requires_grad) {
      // dB = A^T * G
      kernels::gemm_tn(kt, k, m, n, an->values.data(), g.data(), grad_of(*bn).data());
    }
  });
}

Tensor Tape::matmul_transposed(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_transposed: column counts differ, " + shape_of(a) + " * (" +
                         shape_of(b) + ")^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out(m, n);
  const auto& kt = kernels::active();
  kernels::gemm_nt(kt, m, k, n, a.values().data(), b.values().data(), out.mutable_values().data());
  NodePtr an = a.node_, bn = b.node_;
  return record(out, {&a, &b}, [an, bn, m, k, n](const std::vector<double>& g) {
    const auto& kt = kernels::active();
    if (an->requires_grad) {
      // dA = G * B
      kernels::gemm_nn(kt, m, n, k, g.data(), bn->values.data(), grad_of(*an).data());
    }
    if (bn->requires_grad) {
      // dB = G^T * A
      kernels::gemm_tn(kt, n, m, k, g.data(), an->values.data(), grad_of(*bn).data());
    }
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.rows(), a.cols());
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.values()[i] + b.values()[i];
  NodePtr an = a.node_, bn = b.node_;
  return record(out, {&a, &b}, [an, bn](const std::vector<double>& g) {
    if (an->requires_grad) kernels::axpy(1.0, g, grad_of(*an));
    if (bn->requires_grad) kernels::axpy(1.0, g, grad_of(*bn));
  });
}

Tensor Tape::add_row(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_row: bias " + shape_of(bias) + " does not broadcast over " +
                         shape_of(x));
  }
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(r, c, std::vector<double>(x.values().begin(), x.values().end()));
  for (std::size_t i = 0; i < r; ++i) kernels::axpy(1.0, bias.values(), out.mutable_values().subspan(i * c, c));
  NodePtr xn = x.node_, bn = bias.node_;
  return record(out, {&x, &bias}, [xn, bn, r, c](const std::vector<double>& g) {
    if (xn->requires_grad) kernels::axpy(1.0, g, grad_of(*xn));
    if (bn->requires_grad) {
      auto& gb = grad_of(*bn);
      for (std::size_t i = 0; i < r; ++i) {
        kernels::axpy(1.0, std::span<const double>(g).subspan(i * c, c), gb);
      }
    }
  });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.rows(), a.cols());
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.values()[i] * b.values()[i];
  NodePtr an = a.node_, bn = b.node_;
  return record(out, {&a, &b}, [an, bn](const std::vector<double>& g) {
    if (an->requires_grad) {
      auto& ga = grad_of(*an);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->values[i];
    }
    if (bn->requires_grad) {
      auto& gb = grad_of(*bn);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->values[i];
    }
  });
}

Tensor Tape::scale(const Tensor& x, double factor) {
  Tensor out(x.rows(), x.cols());
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = factor * x.values()[i];
  NodePtr xn = x.node_;
  return record(out, {&x}, [xn, factor](const std::vector<double>& g) {
    kernels::axpy(factor, g, grad_of(*xn));
  });
}

Tensor Tape::softmax_rows(const Tensor& x) {
  require_non_empty("softmax_rows", x);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(r, c);
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < r; ++i) {
    auto in = x.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[i * c + j] = std::exp(in[j] - mx);
      z += o[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) o[i * c + j] /= z;
  }
  NodePtr xn = x.node_, on = out.node_;
  return record(out, {&x}, [xn, on, r, c](const std::vector<double>& g) {
    auto& gx = grad_of(*xn);
    const auto& y = on->values;
    for (std::size_t i = 0; i < r; ++i) {
      const double inner = kernels::dot(std::span<const double>(g).subspan(i * c, c),
                                        std::span<const double>(y).subspan(i * c, c));
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - inner);
    }
  });
}

Tensor Tape::softmax_cols(const Tensor& x) {
  require_non_empty("softmax_cols", x);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(r, c);
  auto o = out.mutable_values();
  const auto in = x.values();
  for (std::size_t j = 0; j < c; ++j) {
    double mx = in[j];
    for (std::size_t i = 1; i < r; ++i) mx = std::max(mx, in[i * c + j]);
    double z = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      o[i * c + j] = std::exp(in[i * c + j] - mx);
      z += o[i * c + j];
    }
    for (std::size_t i = 0; i < r; ++i) o[i * c + j] /= z;
  }
  NodePtr xn = x.node_, on = out.node_;
  return record(out, {&x}, [xn, on, r, c](const std::vector<double>& g) {
    auto& gx = grad_of(*xn);
    const auto& y = on->values;
    for (std::size_t j = 0; j < c; ++j) {
      double inner = 0.0;
      for (std::size_t i = 0; i < r; ++i) inner += g[i * c + j] * y[i * c + j];
      for (std::size_t i = 0; i < r; ++i) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - inner);
    }
  });
}

Tensor Tape::sigmoid(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = x.values()[i];
    // Split by sign so exp never overflows.
    if (v >= 0.0) {
      o[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      o[i] = e / (1.0 + e);
    }
  }
  NodePtr xn = x.node_, on = out.node_;
  return record(out, {&x}, [xn, on](const std::vector<double>& g) {
    auto& gx = grad_of(*xn);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = on->values[i];
      gx[i] += g[i] * s * (1.0 - s);
    }
  });
}

Tensor Tape::relu(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::max(0.0, x.values()[i]);
  NodePtr xn = x.node_;
  return record(out, {&x}, [xn](const std::vector<double>& g) {
    auto& gx = grad_of(*xn);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xn->values[i] > 0.0) gx[i] += g[i];
    }
  });
}

Tensor Tape::clamp(const Tensor& x, double lo, double hi) {
  Tensor out(x.rows(), x.cols());
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(x.values()[i], lo, hi);
  NodePtr xn = x.node_;
  return record(out, {&x}, [xn, lo, hi](const std::vector<double>& g) {
    auto& gx = grad_of(*xn);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xn->values[i];
      if (v >= lo && v <= hi) gx[i] += g[i];
    }
  });
}

Tensor Tape::sum(const Tensor& x) {
  Tensor out(1, 1, kernels::sum(x.values()));
  NodePtr xn = x.node_;
  return record(out, {&x}, [xn](const std::vector<double>& g) {
    auto& gx = grad_of(*xn);
    for (double& v : gx) v += g[0];
  });
}

Tensor Tape::column_sum(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(1, c);
  for (std::size_t i = 0; i < r; ++i) kernels::axpy(1.0, x.row(i), out.mutable_values());
  NodePtr xn = x.node_;
  return record(out, {&x}, [xn, r, c](const std::vector<double>& g) {
    auto& gx = grad_of(*xn);
    for (std::size_t i = 0; i < r; ++i) {
      kernels::axpy(1.0, g, std::span<double>(gx).subspan(i * c, c));
    }
  });
}

Tensor Tape::bce(const Tensor& p, const Tensor& target) {
  require_same_shape("bce", p, target);
  require_non_empty("bce", p);
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = clamp_prob(p.values()[i]);
    const double t = target.values()[i];
    total += -t * std::log(q) - (1.0 - t) * std::log(1.0 - q);
  }
  Tensor out(1, 1, total / n);
  NodePtr pn = p.node_, tn = target.node_;
  return record(out, {&p}, [pn, tn, n](const std::vector<double>& g) {
    auto& gp = grad_of(*pn);
    for (std::size_t i = 0; i < gp.size(); ++i) {
      const double raw = pn->values[i];
      if (raw < kLogEpsilon || raw > 1.0 - kLogEpsilon) continue;
      const double t = tn->values[i];
      gp[i] += g[0] * (-t / raw + (1.0 - t) / (1.0 - raw)) / n;
    }
  });
}

Tensor Tape::weighted_nll(const Tensor& probs, std::span<const int> labels,
                          std::span<const double> weights) {
  require_non_empty("weighted_nll", probs);
  if (labels.size() != probs.rows() || weights.size() != probs.rows()) {
    throw DimensionError("weighted_nll: " + std::to_string(labels.size()) + " labels / " +
                         std::to_string(weights.size()) + " weights for probs " + shape_of(probs));
  }
  const std::size_t r = probs.rows(), c = probs.cols();
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= c) {
      throw DimensionError("weighted_nll: label " + std::to_string(l) + " outside " + shape_of(probs));
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    total += -weights[i] * std::log(clamp_prob(probs(i, static_cast<std::size_t>(labels[i]))));
  }
  Tensor out(1, 1, total / static_cast<double>(r));
  NodePtr pn = probs.node_;
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<double> w(weights.begin(), weights.end());
  return record(out, {&probs},
                [pn, lab = std::move(lab), w = std::move(w), r, c](const std::vector<double>& g) {
                  auto& gp = grad_of(*pn);
                  for (std::size_t i = 0; i < r; ++i) {
                    const std::size_t idx = i * c + static_cast<std::size_t>(lab[i]);
                    const double v = pn->values[idx];
                    if (v < kLogEpsilon || v > 1.0 - kLogEpsilon) continue;
                    gp[idx] += g[0] * (-w[i] / v) / static_cast<double>(r);
                  }
                });
}

Tensor Tape::masked_smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& mask,
                              double normalizer) {
  require_same_shape("masked_smooth_l1", pred, target);
  require_same_shape("masked_smooth_l1", pred, mask);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask.values()[i] == 0.0) continue;
    const double d = pred.values()[i] - target.values()[i];
    const double a = std::abs(d);
    total += a < 1.0 ? 0.5 * d * d : a - 0.5;
  }
  const double norm = normalizer > 0.0 ? normalizer : 1.0;
  Tensor out(1, 1, normalizer > 0.0 ? total / norm : 0.0);
  NodePtr pn = pred.node_, tn = target.node_, mn = mask.node_;
  return record(out, {&pred}, [pn, tn, mn, norm](const std::vector<double>& g) {
    auto& gp = grad_of(*pn);
    for (std::size_t i = 0; i < gp.size(); ++i) {
      if (mn->values[i] == 0.0) continue;
      const double d = pn->values[i] - tn->values[i];
      const double slope = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
      gp[i] += g[0] * slope / norm;
    }
  });
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw TapeError("backward: loss must be 1x1, got " + loss.shape_string());
  if (consumed_) throw TapeError("backward: tape already consumed");
  auto it = std::find_if(ops_.rbegin(), ops_.rend(),
                         [&](const Op& op) { return op.output == loss.node_; });
  if (it == ops_.rend()) throw TapeError("backward: loss was not produced on this tape");
  consumed_ = true;
  grad_of(*loss.node_)[0] += 1.0;
  // Reverse topological order; ops recorded after the loss cannot feed it.
  for (; it != ops_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->propagate(it->output->grad);
  }
}

void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

}  // namespace dsmil
