#include "mfaec/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mfaec {

namespace {

double eval_scalar(const ScalarFn& f, ParamSet& params) {
  Tape tape;
  ParamBinder bind(tape);
  Tensor loss = f(tape, bind);
  if (!loss.is_scalar())
    throw std::runtime_error("grad_check: function did not produce a scalar");
  return loss.at(0);
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, ParamSet& params, double h, double tol) {
  if (h <= 0.0) throw std::runtime_error("grad_check: step must be positive");

  GradCheckReport report;

  // Analytic pass.
  Tape tape;
  ParamBinder bind(tape);
  Tensor loss = f(tape, bind);
  if (!loss.is_scalar())
    throw std::runtime_error("grad_check: function did not produce a scalar");
  const double f0 = loss.at(0);
  if (!std::isfinite(f0)) {
    report.nonfinite += 1;
    return report;
  }
  GradMap gm = backward(tape, loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    NodeId id = bind.node_of(p);
    if (id != kNoNode && gm.has(id)) {
      analytic.push_back(gm.at(id));
    } else {
      analytic.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
  }

  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = *params[pi].values;
    for (size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = eval_scalar(f, params);
      vals[i] = orig - h;
      const double fm = eval_scalar(f, params);
      vals[i] = orig;

      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.nonfinite += 1;
        continue;
      }

      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / denom;

      GradCheckEntry entry{params[pi].name, static_cast<int>(i), a, numeric, rel};

      if (rel > tol) {
        // Disagreeing one-sided slopes mean the loss is not differentiable
        // here (a PReLU input crossing zero); such coordinates are excluded.
        const double splus = (fp - f0) / h;
        const double sminus = (f0 - fm) / h;
        const double gap = std::abs(splus - sminus);
        if (gap > 0.1 * std::max({std::abs(splus), std::abs(sminus), 1e-6})) {
          report.kink_excluded += 1;
          if (report.kinks.size() < 8) report.kinks.push_back(entry);
          continue;
        }
      }

      report.checked += 1;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      if (rel > tol && report.failures.size() < 8) report.failures.push_back(entry);
    }
  }

  std::sort(report.failures.begin(), report.failures.end(),
            [](const GradCheckEntry& x, const GradCheckEntry& y) { return x.rel_err > y.rel_err; });
  report.pass = report.nonfinite == 0 && report.max_rel_err <= tol;
  return report;
}

}  // namespace mfaec
