#pragma once

#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "mfaec/tensor.hpp"

namespace mfaec {

// Named parameter collection. Storage is a deque so Param addresses stay
// stable; ParamBinder and AdamState key off them.
class ParamSet {
 public:
  Param& add(std::string name, std::vector<int> shape);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  const Param* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }

  size_t size() const { return params_.size(); }
  int64_t total_numel() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  Param& operator[](size_t i) { return params_[i]; }
  const Param& operator[](size_t i) const { return params_[i]; }

 private:
  std::deque<Param> params_;
  std::unordered_map<std::string, size_t> index_;
};

// Per-step gradient buffers aligned with a ParamSet. Gradients accumulate
// across calls; zero() starts a fresh optimization step.
class GradAccumulator {
 public:
  explicit GradAccumulator(const ParamSet& params);

  void zero();
  void add(size_t param_index, const std::vector<double>& grad);
  void scale(double factor);
  const std::vector<double>& grad(size_t param_index) const { return grads_[param_index]; }
  size_t size() const { return grads_.size(); }

 private:
  std::vector<std::vector<double>> grads_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment accumulators plus the shared step counter.
class AdamState {
 public:
  AdamState(const ParamSet& params, AdamConfig config);

  int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return config_; }

  friend void adam_step(ParamSet& params, const GradAccumulator& grads, AdamState& state);

 private:
  AdamConfig config_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// One bias-corrected Adam update, in place. Throws on missing or
// mismatched gradients.
void adam_step(ParamSet& params, const GradAccumulator& grads, AdamState& state);

}  // namespace mfaec
