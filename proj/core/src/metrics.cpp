#include "mfaec/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mfaec {

int argmax_lowest(const double* values, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<double> recalls_from_confusion(const std::vector<int64_t>& confusion,
                                           int n_classes) {
  if (confusion.size() != static_cast<size_t>(n_classes) * n_classes)
    throw std::runtime_error("recalls_from_confusion: matrix size mismatch");
  std::vector<double> recalls(static_cast<size_t>(n_classes), 0.0);
  for (int c = 0; c < n_classes; ++c) {
    int64_t row = 0;
    for (int p = 0; p < n_classes; ++p)
      row += confusion[static_cast<size_t>(c) * n_classes + p];
    if (row > 0)
      recalls[static_cast<size_t>(c)] =
          static_cast<double>(confusion[static_cast<size_t>(c) * n_classes + c]) /
          static_cast<double>(row);
  }
  return recalls;
}

double uar_from_confusion(const std::vector<int64_t>& confusion, int n_classes) {
  const auto recalls = recalls_from_confusion(confusion, n_classes);
  double sum = 0.0;
  for (double r : recalls) sum += r;
  return sum / static_cast<double>(n_classes);
}

void finalize_report(MetricsReport& report) {
  report.recalls = recalls_from_confusion(report.confusion, report.n_classes);
  double sum = 0.0;
  for (double r : report.recalls) sum += r;
  report.uar = sum / static_cast<double>(report.n_classes);
}

MetricsRow to_row(const MetricsReport& report, const std::string& run_id,
                  const std::string& mode, uint64_t seed) {
  MetricsRow row;
  row.run_id = run_id;
  row.mode = mode;
  row.seed = seed;
  row.epoch = report.epoch;
  row.uar = report.uar;
  row.recalls = report.recalls;
  row.loss_emo = report.loss_emo;
  row.loss_d = report.loss_d;
  row.loss_e = report.loss_e;
  return row;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                       int n_classes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  out << "run_id,mode,seed,epoch,uar";
  for (int c = 0; c < n_classes; ++c) out << ",recall_" << c;
  out << ",loss_emo,loss_d,loss_e\n";
  for (const auto& row : rows) {
    if (row.recalls.size() != static_cast<size_t>(n_classes))
      throw std::runtime_error("write_metrics_csv: row '" + row.run_id + "' has " +
                               std::to_string(row.recalls.size()) + " recalls, want " +
                               std::to_string(n_classes));
    out << row.run_id << "," << row.mode << "," << row.seed << "," << row.epoch << ","
        << fmt_double(row.uar);
    for (double r : row.recalls) out << "," << fmt_double(r);
    out << "," << fmt_double(row.loss_emo) << "," << fmt_double(row.loss_d) << ","
        << fmt_double(row.loss_e) << "\n";
  }
  if (!out) throw std::runtime_error("write_metrics_csv: write failed for " + path);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_metrics_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(path + ":1: missing metrics header");
  const auto header = split_csv_line(line);
  if (header.size() < 8 || header[0] != "run_id")
    throw std::runtime_error(path + ":1: unexpected metrics header '" + line + "'");
  const size_t n_classes = header.size() - 8;
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(header.size()) + " fields, got " +
                               std::to_string(fields.size()));
    MetricsRow row;
    size_t f = 0;
    row.run_id = fields[f++];
    row.mode = fields[f++];
    row.seed = static_cast<uint64_t>(std::stoull(fields[f++]));
    row.epoch = std::stoi(fields[f++]);
    row.uar = std::stod(fields[f++]);
    row.recalls.resize(n_classes);
    for (size_t c = 0; c < n_classes; ++c) row.recalls[c] = std::stod(fields[f++]);
    row.loss_emo = std::stod(fields[f++]);
    row.loss_d = std::stod(fields[f++]);
    row.loss_e = std::stod(fields[f++]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mfaec
