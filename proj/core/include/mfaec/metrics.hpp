#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mfaec {

// Evaluation summary. `wall_s` is informational and never serialized: CSV
// rows must be identical across reruns of the same seed.
struct MetricsReport {
  int epoch = 0;
  int n_classes = 0;
  double uar = 0.0;
  std::vector<double> recalls;      // per class; empty gold class counts as 0
  std::vector<int64_t> confusion;   // n_classes^2, row = gold, col = predicted
  double loss_emo = 0.0;            // mean per example
  double loss_d = 0.0;
  double loss_e = 0.0;
  double loss_total = 0.0;
  int64_t n_examples = 0;
  double wall_s = 0.0;

  int64_t& conf(int gold, int pred) {
    return confusion[static_cast<size_t>(gold) * n_classes + pred];
  }
  int64_t conf(int gold, int pred) const {
    return confusion[static_cast<size_t>(gold) * n_classes + pred];
  }
};

// Lowest index wins ties.
int argmax_lowest(const double* values, int n);

std::vector<double> recalls_from_confusion(const std::vector<int64_t>& confusion,
                                           int n_classes);
double uar_from_confusion(const std::vector<int64_t>& confusion, int n_classes);

// Fills recalls and uar from the confusion matrix.
void finalize_report(MetricsReport& report);

// One CSV row of a training/evaluation/ablation run.
struct MetricsRow {
  std::string run_id;
  std::string mode;
  uint64_t seed = 0;
  int epoch = 0;
  double uar = 0.0;
  std::vector<double> recalls;
  double loss_emo = 0.0;
  double loss_d = 0.0;
  double loss_e = 0.0;
};

MetricsRow to_row(const MetricsReport& report, const std::string& run_id,
                  const std::string& mode, uint64_t seed);

// Columns: run_id,mode,seed,epoch,uar,recall_0..recall_{e-1},loss_emo,loss_d,loss_e.
// Numbers print with %.17g so a parse-print cycle is byte-stable.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                       int n_classes);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

}  // namespace mfaec
