#pragma once

// Dense row-major float64 matrices with a reverse-mode gradient tape.
//
// A Tensor is a shared handle: copies alias the same storage, the way
// parameters are shared between the model, the tape and the optimizer.
// Operations that should be differentiated are issued through a Tape; an op
// is recorded only when at least one operand requires a gradient.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dsmil {

namespace detail {
struct TensorNode {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);
  // Leaf tensor that accumulates gradients.
  static Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->values.size(); }
  bool empty() const { return node_->values.empty(); }
  std::string shape_string() const;

  std::span<const double> values() const { return node_->values; }
  std::span<double> mutable_values() { return node_->values; }
  std::span<const double> row(std::size_t i) const;
  double operator()(std::size_t i, std::size_t j) const { return node_->values[i * cols() + j]; }
  double& at(std::size_t i, std::size_t j) { return node_->values[i * cols() + j]; }
  double item() const;  // 1x1 only

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  // Allocates (if needed) and zero-fills the gradient buffer.
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  // New storage with the same values, outside any tape.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Tensor matmul(const Tensor& a, const Tensor& b);
  // a * b^T
  Tensor matmul_transposed(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  // x[rows x cols] + bias[1 x cols] broadcast over rows
  Tensor add_row(const Tensor& x, const Tensor& bias);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& x, double factor);
  Tensor softmax_rows(const Tensor& x);
  Tensor softmax_cols(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  Tensor relu(const Tensor& x);
  Tensor clamp(const Tensor& x, double lo, double hi);
  Tensor sum(const Tensor& x);
  Tensor column_sum(const Tensor& x);

  // Mean binary cross entropy; p is clamped to [eps, 1-eps] before the log.
  Tensor bce(const Tensor& p, const Tensor& target);
  // (1/rows) * sum_i -weights[i] * log(clamp(probs[i][labels[i]]))
  Tensor weighted_nll(const Tensor& probs, std::span<const int> labels,
                      std::span<const double> weights);
  // (1/normalizer) * sum over mask != 0 of smooth_l1(pred - target)
  Tensor masked_smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& mask,
                          double normalizer);

  void backward(const Tensor& loss);

  std::size_t size() const { return ops_.size(); }
  bool contains(const Tensor& t) const;

 private:
  struct Op {
    std::shared_ptr<detail::TensorNode> output;
    std::function<void(const std::vector<double>& out_grad)> propagate;
  };

  Tensor record(Tensor out, std::initializer_list<const Tensor*> inputs,
                std::function<void(const std::vector<double>&)> propagate);

  std::vector<Op> ops_;
  bool consumed_ = false;
};

// Populates grad on every requires_grad tensor reachable from loss.
void backward(Tape& tape, const Tensor& loss);

inline constexpr double kLogEpsilon = 1e-7;

}  // namespace dsmil
