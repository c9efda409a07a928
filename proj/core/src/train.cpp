#include "mfaec/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "mfaec/rng.hpp"

namespace mfaec {

namespace {

constexpr uint64_t kTrainTag = 0x74726e7368ULL;  // shuffle stream tag
constexpr uint64_t kDropTag = 0x64726f70ULL;     // dropout stream tag

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr))
    throw std::runtime_error("train config: lr must be positive and finite");
  if (batch_size < 1) throw std::runtime_error("train config: batch_size must be >= 1");
  if (epochs < 0) throw std::runtime_error("train config: epochs must be >= 0");
  if (!(beta >= 0.0) || !(gamma >= 0.0))
    throw std::runtime_error("train config: beta and gamma must be >= 0");
  if (eval_interval < 0)
    throw std::runtime_error("train config: eval_interval must be >= 0");
  if (!(target_uar >= 0.0 && target_uar <= 1.0))
    throw std::runtime_error("train config: target_uar must be in [0,1]");
  if (threads < 1) throw std::runtime_error("train config: threads must be >= 1");
  model.validate();
}

TrainConfig TrainConfig::from_kv(const KvFile& kv) {
  TrainConfig c;
  c.mode = parse_ablation_mode(kv.get_string("mode", "full"));
  c.lr = kv.get_double("lr", c.lr);
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.beta = kv.get_double("beta", c.beta);
  c.gamma = kv.get_double("gamma", c.gamma);
  c.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(c.seed)));
  c.eval_interval = static_cast<int>(kv.get_int("eval_interval", c.eval_interval));
  c.target_uar = kv.get_double("target_uar", c.target_uar);
  c.threads = static_cast<int>(kv.get_int("threads", c.threads));
  c.data_path = kv.get_string("data_path", c.data_path);
  c.eval_path = kv.get_string("eval_path", c.eval_path);
  c.model = ModelConfig::from_kv(kv);
  c.validate();
  return c;
}

KvFile TrainConfig::to_kv() const {
  KvFile kv = model.to_kv();
  kv.set("mode", ablation_mode_name(mode));
  kv.set_double("lr", lr);
  kv.set_int("batch_size", batch_size);
  kv.set_int("epochs", epochs);
  kv.set_double("beta", beta);
  kv.set_double("gamma", gamma);
  kv.set_int("seed", static_cast<int64_t>(seed));
  kv.set_int("eval_interval", eval_interval);
  kv.set_double("target_uar", target_uar);
  kv.set_int("threads", threads);
  if (!data_path.empty()) kv.set("data_path", data_path);
  if (!eval_path.empty()) kv.set("eval_path", eval_path);
  return kv;
}

MetricsReport evaluate(const ModelParams& params,
                       const std::vector<UtteranceExample>& data, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const int e = params.config.n_emotions;
  MetricsReport report;
  report.n_classes = e;
  report.confusion.assign(static_cast<size_t>(e) * e, 0);
  const size_t n = data.size();
  report.n_examples = static_cast<int64_t>(n);
  if (n == 0) {
    finalize_report(report);
    return report;
  }
  for (const auto& ex : data)
    if (ex.emotion < 0 || ex.emotion >= e)
      throw std::runtime_error("evaluate: utterance " + std::to_string(ex.id) +
                               " has emotion " + std::to_string(ex.emotion) +
                               " outside 0.." + std::to_string(e - 1));

  std::vector<int> preds(n, 0);
  std::vector<double> losses(n, 0.0);
  auto run_range = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      Tape tape;
      ParamBinder bind(tape);
      Tensor probs = forward_infer(tape, bind, params, data[i]);
      preds[i] = argmax_lowest(probs.data(), e);
      losses[i] = -std::log(std::max(probs.at(0, data[i].emotion), 1e-12));
    }
  };

  const int t_count = static_cast<int>(
      std::min<size_t>(static_cast<size_t>(std::max(threads, 1)), n));
  if (t_count <= 1) {
    run_range(0, n);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(t_count));
    for (int t = 0; t < t_count; ++t) {
      const size_t begin = n * static_cast<size_t>(t) / t_count;
      const size_t end = n * (static_cast<size_t>(t) + 1) / t_count;
      workers.emplace_back([&, t, begin, end] {
        try {
          run_range(begin, end);
        } catch (...) {
          errors[static_cast<size_t>(t)] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& err : errors)
      if (err) std::rethrow_exception(err);
  }

  // Index-order reduction: identical totals for any thread count.
  double loss_sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ++report.conf(data[i].emotion, preds[i]);
    loss_sum += losses[i];
  }
  report.loss_emo = loss_sum / static_cast<double>(n);
  report.loss_total = report.loss_emo;
  finalize_report(report);
  report.wall_s = seconds_since(t0);
  return report;
}

MetricsReport evaluate_checkpoint(const Checkpoint& ckpt,
                                  const std::vector<UtteranceExample>& data,
                                  int threads) {
  return evaluate(ckpt.params, data, threads);
}

TrainOutput train(const TrainConfig& config,
                  const std::vector<UtteranceExample>& train_data,
                  const std::vector<UtteranceExample>* eval_data, std::ostream* log) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ModelParams params = init_params(config.model, config.mode, config.seed);
  AdamConfig adam_config;
  adam_config.lr = config.lr;
  AdamState adam(params.set, adam_config);
  GradAccumulator grads(params.set);

  TrainOutput out;
  const size_t n = train_data.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  int64_t step = 0;
  int epochs_run = 0;
  bool stop = false;

  for (int epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    if (n == 0) throw std::runtime_error("train: empty training corpus");
    Rng shuffle_rng(derive_seed(derive_seed(config.seed, kTrainTag),
                                static_cast<uint64_t>(epoch)));
    for (size_t i = n - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(shuffle_rng.below(i + 1));
      std::swap(order[i], order[j]);
    }

    double sum_emo = 0.0, sum_d = 0.0, sum_e = 0.0, sum_total = 0.0;
    size_t batch_id = 0;
    for (size_t b = 0; b < n; b += static_cast<size_t>(config.batch_size), ++batch_id) {
      const size_t bend = std::min(n, b + static_cast<size_t>(config.batch_size));
      grads.zero();
      for (size_t i = b; i < bend; ++i) {
        const UtteranceExample& ex = train_data[order[i]];
        Tape tape;
        ParamBinder bind(tape);
        Rng drop_rng(derive_seed(derive_seed(config.seed, kDropTag),
                                 static_cast<uint64_t>(epoch) * 0x100000000ULL +
                                     static_cast<uint64_t>(i)));
        TrainResult r =
            forward_train(tape, bind, params, ex, config.beta, config.gamma,
                          config.model.dropout > 0.0 ? &drop_rng : nullptr);
        const double ltot = r.loss_total.at(0);
        if (!std::isfinite(ltot))
          throw std::runtime_error("train: non-finite loss in epoch " +
                                   std::to_string(epoch) + " batch " +
                                   std::to_string(batch_id) + " (utterance " +
                                   std::to_string(ex.id) + ")");
        sum_total += ltot;
        sum_emo += r.loss_emo.at(0);
        if (r.loss_d.values) sum_d += r.loss_d.at(0);
        if (r.loss_e.values) sum_e += r.loss_e.at(0);
        GradMap gm = backward(tape, r.loss_total);
        for (size_t pi = 0; pi < params.set.size(); ++pi) {
          const NodeId nid = bind.node_of(params.set[pi]);
          if (nid != kNoNode && gm.has(nid)) grads.add(pi, gm.at(nid));
        }
      }
      grads.scale(1.0 / static_cast<double>(bend - b));
      adam_step(params.set, grads, adam);
      ++step;
    }
    epochs_run = epoch + 1;

    const bool eval_now = config.eval_interval > 0 && eval_data != nullptr &&
                          (epoch + 1) % config.eval_interval == 0;
    if (eval_now) {
      MetricsReport rep = evaluate(params, *eval_data, config.threads);
      rep.epoch = epoch;
      rep.loss_emo = sum_emo / static_cast<double>(n);
      rep.loss_d = sum_d / static_cast<double>(n);
      rep.loss_e = sum_e / static_cast<double>(n);
      rep.loss_total = sum_total / static_cast<double>(n);
      rep.wall_s = seconds_since(t0);
      if (log) {
        char line[256];
        std::snprintf(line, sizeof line,
                      "epoch %3d  loss %.4f (emo %.4f det %.4f cor %.4f)  uar %.4f  "
                      "%.1fs",
                      epoch, rep.loss_total, rep.loss_emo, rep.loss_d, rep.loss_e,
                      rep.uar, rep.wall_s);
        (*log) << line << "\n" << std::flush;
      }
      if (config.target_uar > 0.0 && rep.uar >= config.target_uar) stop = true;
      out.reports.push_back(std::move(rep));
    } else if (log) {
      char line[192];
      std::snprintf(line, sizeof line,
                    "epoch %3d  loss %.4f (emo %.4f det %.4f cor %.4f)  %.1fs", epoch,
                    sum_total / static_cast<double>(n), sum_emo / static_cast<double>(n),
                    sum_d / static_cast<double>(n), sum_e / static_cast<double>(n),
                    seconds_since(t0));
      (*log) << line << "\n" << std::flush;
    }
  }

  out.checkpoint.params = std::move(params);
  out.checkpoint.step = step;
  out.checkpoint.rng_state = derive_seed(derive_seed(config.seed, kTrainTag),
                                         static_cast<uint64_t>(epochs_run));
  return out;
}

AblationTable ablate(const TrainConfig& base, const std::vector<std::string>& modes,
                     const std::vector<uint64_t>& seeds,
                     const std::vector<UtteranceExample>& train_data,
                     const std::vector<UtteranceExample>& eval_data, std::ostream* log) {
  if (modes.empty()) throw std::runtime_error("ablate: no modes given");
  if (seeds.empty()) throw std::runtime_error("ablate: no seeds given");
  AblationTable table;
  for (const std::string& mode_name : modes) {
    std::vector<double> uars;
    for (uint64_t seed : seeds) {
      TrainConfig config = base;
      config.mode = parse_ablation_mode(mode_name);
      config.seed = seed;
      if (log)
        (*log) << "ablate: mode " << mode_name << " seed " << seed << "\n" << std::flush;
      TrainOutput run = train(config, train_data, eval_data.empty() ? nullptr : &eval_data,
                              log);
      AblationRow row;
      row.mode = mode_name;
      row.seed = seed;
      row.report = evaluate_checkpoint(run.checkpoint, eval_data, config.threads);
      row.uar = row.report.uar;
      uars.push_back(row.uar);
      if (log) {
        char line[128];
        std::snprintf(line, sizeof line, "ablate: mode %s seed %llu  uar %.4f",
                      mode_name.c_str(), static_cast<unsigned long long>(seed), row.uar);
        (*log) << line << "\n" << std::flush;
      }
      table.rows.push_back(std::move(row));
    }
    table.median_uar[mode_name] = median(std::move(uars));
  }
  return table;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::runtime_error("median: empty input");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void write_ablation_csv(const std::string& path, const AblationTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_ablation_csv: cannot open " + path);
  char buf[40];
  out << "mode,seed,uar\n";
  for (const auto& row : table.rows) {
    std::snprintf(buf, sizeof buf, "%.17g", row.uar);
    out << row.mode << "," << row.seed << "," << buf << "\n";
  }
  for (const auto& [mode, uar] : table.median_uar) {
    std::snprintf(buf, sizeof buf, "%.17g", uar);
    out << mode << ",median," << buf << "\n";
  }
  if (!out) throw std::runtime_error("write_ablation_csv: write failed for " + path);
}

AblationTable read_ablation_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_ablation_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "mode,seed,uar")
    throw std::runtime_error(path + ":1: unexpected ablation header '" + line + "'");
  AblationTable table;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string mode, seed_field, uar_field;
    if (!std::getline(ls, mode, ',') || !std::getline(ls, seed_field, ',') ||
        !std::getline(ls, uar_field))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed ablation row '" + line + "'");
    if (seed_field == "median") {
      table.median_uar[mode] = std::stod(uar_field);
    } else {
      AblationRow row;
      row.mode = mode;
      row.seed = static_cast<uint64_t>(std::stoull(seed_field));
      row.uar = std::stod(uar_field);
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

}  // namespace mfaec
