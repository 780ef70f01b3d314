#include "dsmil/sgd.hpp"

#include <algorithm>
#include <cmath>

#include "dsmil/error.hpp"

namespace dsmil {

void ParameterSet::add(std::string name, Tensor tensor) {
  if (contains(name)) throw ValidationError("parameter '" + name + "' registered twice");
  tensor.set_requires_grad(true);
  entries_.emplace_back(std::move(name), std::move(tensor));
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw LookupError("no parameter named '" + name + "'");
}

Tensor& ParameterSet::get(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("sgd: learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("sgd: momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("sgd: weight_decay must be >= 0");
  if (!(decay_factor > 0.0)) throw ValidationError("sgd: decay_factor must be > 0");
}

double SgdConfig::rate_at(std::size_t iteration) const {
  double lr = learning_rate;
  for (std::size_t step : decay_steps) {
    if (iteration >= step) lr /= decay_factor;
  }
  return lr;
}

Sgd::Sgd(SgdConfig config) : config_(std::move(config)) { config_.validate(); }

void Sgd::step(ParameterSet& params, std::size_t iteration) {
  for (auto& [name, t] : params) {
    if (!t.has_grad()) throw OptimizerError("sgd: parameter '" + name + "' has no gradient");
  }
  const double lr = config_.rate_at(iteration);
  for (auto& [name, t] : params) {
    auto& vel = velocity_[name];
    if (vel.size() != t.size()) vel.assign(t.size(), 0.0);
    auto p = t.mutable_values();
    auto g = t.mutable_grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      vel[i] = config_.momentum * vel[i] - lr * (g[i] + config_.weight_decay * p[i]);
      p[i] += vel[i];
      g[i] = 0.0;
    }
  }
}

void sgd_step(ParameterSet& params, const SgdConfig& config, std::size_t iteration) {
  Sgd opt(config);
  opt.step(params, iteration);
}

}  // namespace dsmil
