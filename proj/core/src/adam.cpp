#include "mfaec/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace mfaec {

Param& ParamSet::add(std::string name, std::vector<int> shape) {
  if (index_.count(name))
    throw std::runtime_error("param set: duplicate parameter name '" + name + "'");
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0)
      throw std::runtime_error("param set: non-positive extent in '" + name + "' shape " +
                               shape_str(shape));
    n *= d;
  }
  Param p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.values = std::make_shared<std::vector<double>>(static_cast<size_t>(n), 0.0);
  index_.emplace(p.name, params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::runtime_error("param set: unknown parameter '" + name + "'");
  return params_[it->second];
}

const Param& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::runtime_error("param set: unknown parameter '" + name + "'");
  return params_[it->second];
}

const Param* ParamSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

int64_t ParamSet::total_numel() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

GradAccumulator::GradAccumulator(const ParamSet& params) {
  grads_.reserve(params.size());
  for (const auto& p : params)
    grads_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
}

void GradAccumulator::zero() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
}

void GradAccumulator::add(size_t param_index, const std::vector<double>& grad) {
  if (param_index >= grads_.size())
    throw std::runtime_error("grad accumulator: parameter index out of range");
  auto& dst = grads_[param_index];
  if (dst.size() != grad.size())
    throw std::runtime_error("grad accumulator: gradient size " + std::to_string(grad.size()) +
                             " does not match parameter size " + std::to_string(dst.size()));
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += grad[i];
}

void GradAccumulator::scale(double factor) {
  for (auto& g : grads_)
    for (double& v : g) v *= factor;
}

AdamState::AdamState(const ParamSet& params, AdamConfig config) : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
}

void adam_step(ParamSet& params, const GradAccumulator& grads, AdamState& state) {
  if (grads.size() != params.size() || state.m_.size() != params.size())
    throw std::runtime_error("adam: gradient/state count does not match parameter count");
  state.t_ += 1;
  const auto& c = state.config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t_));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi].values;
    const auto& g = grads.grad(pi);
    auto& m = state.m_[pi];
    auto& v = state.v_[pi];
    if (g.size() != p.size() || m.size() != p.size())
      throw std::runtime_error("adam: shape mismatch for parameter '" + params[pi].name + "'");
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace mfaec
