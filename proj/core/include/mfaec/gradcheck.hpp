#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mfaec/adam.hpp"
#include "mfaec/tensor.hpp"

namespace mfaec {

// Builds the scalar loss on the given tape. Must be deterministic: the same
// parameter values must always produce the same loss.
using ScalarFn = std::function<Tensor(Tape&, ParamBinder&)>;

struct GradCheckEntry {
  std::string param;
  int index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;       // over checked (non-kink) entries
  int64_t checked = 0;
  int64_t kink_excluded = 0;      // one-sided slopes disagree: nondifferentiable point
  int64_t nonfinite = 0;
  std::vector<GradCheckEntry> failures;  // capped at a handful, worst first
  std::vector<GradCheckEntry> kinks;
};

// Central finite differences against the reverse-mode gradient, entry by
// entry. Coordinates sitting on an activation kink are reported and excluded
// from the pass criterion; non-finite values fail the report outright.
GradCheckReport grad_check(const ScalarFn& f, ParamSet& params, double h, double tol);

}  // namespace mfaec
