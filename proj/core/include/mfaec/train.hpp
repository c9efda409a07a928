#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mfaec/checkpoint.hpp"
#include "mfaec/kvfile.hpp"
#include "mfaec/metrics.hpp"
#include "mfaec/model.hpp"
#include "mfaec/synthdata.hpp"

namespace mfaec {

struct TrainConfig {
  AblationMode mode = AblationMode::kFull;
  double lr = 1e-3;
  int batch_size = 16;
  int epochs = 30;
  double beta = 0.1;   // auxiliary weight
  double gamma = 3.0;  // detector weight inside the auxiliary term
  uint64_t seed = 1;
  int eval_interval = 1;    // epochs between held-out evals; 0 disables
  double target_uar = 0.0;  // stop once a held-out eval reaches it; 0 runs all epochs
  int threads = 1;          // evaluation sharding
  std::string data_path;    // training corpus
  std::string eval_path;    // held-out corpus (optional)
  ModelConfig model;

  void validate() const;
  // Reads both the trainer keys and the ModelConfig keys from one document.
  static TrainConfig from_kv(const KvFile& kv);
  KvFile to_kv() const;
};

struct TrainOutput {
  Checkpoint checkpoint;
  std::vector<MetricsReport> reports;  // one per eval point
};

// Deterministic for a fixed config: epoch shuffles derive from the seed,
// batch gradients are the batch-mean of per-example gradients, and one Adam
// step runs per batch. Reports carry held-out UAR (when eval data is given)
// together with the epoch's mean training losses. Throws on a non-finite
// loss, naming the batch.
TrainOutput train(const TrainConfig& config,
                  const std::vector<UtteranceExample>& train_data,
                  const std::vector<UtteranceExample>* eval_data,
                  std::ostream* log = nullptr);

// Inference-only pass over the corpus: argmax of forward_infer (ties to the
// lowest class), integer confusion counts, mean -log p(gold) as loss_emo.
// With threads > 1 examples shard across workers; per-example losses reduce
// in index order, so the report is identical for any thread count.
MetricsReport evaluate(const ModelParams& params,
                       const std::vector<UtteranceExample>& data, int threads = 1);
MetricsReport evaluate_checkpoint(const Checkpoint& ckpt,
                                  const std::vector<UtteranceExample>& data,
                                  int threads = 1);

struct AblationRow {
  std::string mode;
  uint64_t seed = 0;
  double uar = 0.0;
  MetricsReport report;
};

struct AblationTable {
  std::vector<AblationRow> rows;                // one per (mode, seed)
  std::map<std::string, double> median_uar;     // per mode
};

// Trains and evaluates each (mode, seed) pair on the given split.
AblationTable ablate(const TrainConfig& base, const std::vector<std::string>& modes,
                     const std::vector<uint64_t>& seeds,
                     const std::vector<UtteranceExample>& train_data,
                     const std::vector<UtteranceExample>& eval_data,
                     std::ostream* log = nullptr);

// Columns: mode,seed,uar; one extra row per mode with seed column "median".
void write_ablation_csv(const std::string& path, const AblationTable& table);
AblationTable read_ablation_csv(const std::string& path);

double median(std::vector<double> values);

}  // namespace mfaec
