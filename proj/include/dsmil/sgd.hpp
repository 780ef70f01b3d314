#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dsmil/tensor.hpp"

namespace dsmil {

// Named learnable tensors, in registration order. Checkpoints and the
// optimizer both walk this order, which keeps them deterministic.
class ParameterSet {
 public:
  void add(std::string name, Tensor tensor);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct SgdConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double decay_factor = 10.0;
  std::vector<std::size_t> decay_steps;

  void validate() const;
  // Base rate divided by decay_factor once per milestone <= iteration.
  double rate_at(std::size_t iteration) const;
};

// Momentum SGD with L2 weight decay:
//   v = momentum * v - lr_t * (grad + weight_decay * param);  param += v
class Sgd {
 public:
  explicit Sgd(SgdConfig config);

  void step(ParameterSet& params, std::size_t iteration);
  const SgdConfig& config() const { return config_; }

 private:
  SgdConfig config_;
  std::map<std::string, std::vector<double>> velocity_;
};

// One optimizer step with fresh (zero) velocity.
void sgd_step(ParameterSet& params, const SgdConfig& config, std::size_t iteration);

}  // namespace dsmil
