// Command-line front end: corpus generation, alignment labeling, training,
// evaluation, and the ablation runner.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "mfaec/align.hpp"
#include "mfaec/checkpoint.hpp"
#include "mfaec/kvfile.hpp"
#include "mfaec/metrics.hpp"
#include "mfaec/model.hpp"
#include "mfaec/synthdata.hpp"
#include "mfaec/train.hpp"
#include "mfaec/vocab.hpp"

namespace {

using namespace mfaec;

struct TokenLine {
  std::string id;
  std::vector<std::string> tokens;
};

std::vector<TokenLine> read_token_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<TokenLine> lines;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    TokenLine tl;
    if (!(ss >> tl.id)) continue;  // blank line
    std::string tok;
    while (ss >> tok) tl.tokens.push_back(tok);
    (void)line_no;
    lines.push_back(std::move(tl));
  }
  return lines;
}

void print_confusion(std::ostream& out, const MetricsReport& rep) {
  out << "confusion (rows = gold, cols = predicted):\n";
  for (int g = 0; g < rep.n_classes; ++g) {
    out << "  ";
    for (int p = 0; p < rep.n_classes; ++p)
      out << rep.conf(g, p) << (p + 1 < rep.n_classes ? ' ' : '\n');
  }
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_gen_data(const std::string& spec_path, const std::string& corrupt_path,
                 int64_t n, const std::string& out_path, int64_t seed,
                 const std::string& eval_out, int64_t eval_n) {
  CorpusSpec spec;
  if (!spec_path.empty()) spec = CorpusSpec::from_kv(KvFile::load(spec_path));
  CorruptionSpec corruption;
  if (!corrupt_path.empty())
    corruption = CorruptionSpec::from_kv(KvFile::load(corrupt_path));
  if (seed >= 0) {
    spec.seed = static_cast<uint64_t>(seed);
    corruption.seed = static_cast<uint64_t>(seed);
  }
  spec.validate();
  corruption.validate();
  if (n <= 0) throw std::runtime_error("gen-data: --n must be positive");
  if (!eval_out.empty() && eval_n <= 0)
    throw std::runtime_error("gen-data: --eval-n must be positive with --eval-out");

  const int64_t total = n + (eval_out.empty() ? 0 : eval_n);
  std::vector<UtteranceExample> examples = gen_corpus(spec, total);
  corrupt_corpus(examples, corruption, spec.vocab_size);

  if (eval_out.empty()) {
    write_corpus(examples, out_path);
  } else {
    std::vector<UtteranceExample> head(examples.begin(), examples.begin() + n);
    std::vector<UtteranceExample> tail(examples.begin() + n, examples.end());
    write_corpus(head, out_path);
    write_corpus(tail, eval_out);
  }

  double wer_sum = 0.0;
  for (const auto& ex : examples) wer_sum += wer(ex.asr, ex.transcript);
  std::cout << "wrote " << n << " examples to " << out_path;
  if (!eval_out.empty())
    std::cout << " and " << eval_n << " examples to " << eval_out;
  std::cout << "\nmean WER of the corruption channel: "
            << wer_sum / static_cast<double>(total) << "\n";
  return 0;
}

int cmd_align(const std::string& hyp_path, const std::string& ref_path) {
  std::vector<TokenLine> hyp_lines = read_token_lines(hyp_path);
  std::vector<TokenLine> ref_lines = read_token_lines(ref_path);
  if (hyp_lines.size() != ref_lines.size())
    throw std::runtime_error("align: " + hyp_path + " has " +
                             std::to_string(hyp_lines.size()) + " utterances but " +
                             ref_path + " has " + std::to_string(ref_lines.size()));

  Vocab vocab;
  for (size_t i = 0; i < hyp_lines.size(); ++i) {
    if (hyp_lines[i].id != ref_lines[i].id)
      throw std::runtime_error("align: utterance " + std::to_string(i) +
                               " ids differ: " + hyp_lines[i].id + " vs " +
                               ref_lines[i].id);
    TokenSequence hyp, ref;
    for (const auto& t : hyp_lines[i].tokens) hyp.push_back(vocab.add(t));
    for (const auto& t : ref_lines[i].tokens) ref.push_back(vocab.add(t));

    AlignmentLabeling lab = label_edits(hyp, ref);
    std::cout << hyp_lines[i].id << '\t';
    if (!lab.alignable) {
      std::cout << "unalignable\t\n";
      continue;
    }
    for (size_t k = 0; k < lab.labels.size(); ++k)
      std::cout << (k ? " " : "") << edit_label_name(lab.labels[k]);
    std::cout << '\t';
    bool first_entry = true;
    for (const auto& [pos, target] : lab.targets) {
      if (!first_entry) std::cout << ';';
      first_entry = false;
      std::cout << pos << ':';
      for (size_t k = 0; k < target.size(); ++k)
        std::cout << (k ? " " : "") << vocab.token_of(target[k]);
    }
    std::cout << '\n';
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_path, const std::string& eval_path,
              const std::string& metrics_path, bool quiet) {
  TrainConfig config = TrainConfig::from_kv(KvFile::load(config_path));
  if (!data_path.empty()) config.data_path = data_path;
  if (!eval_path.empty()) config.eval_path = eval_path;
  config.validate();
  if (config.data_path.empty())
    throw std::runtime_error("train: no training corpus (--data or data_path)");

  std::vector<UtteranceExample> train_data = read_corpus(config.data_path);
  std::vector<UtteranceExample> eval_data;
  if (!config.eval_path.empty()) eval_data = read_corpus(config.eval_path);

  TrainOutput result = train(config, train_data,
                             eval_data.empty() ? nullptr : &eval_data,
                             quiet ? nullptr : &std::cout);
  save_checkpoint(result.checkpoint, out_path);
  std::cout << "checkpoint written to " << out_path << "\n";

  if (!result.reports.empty()) {
    const MetricsReport& last = result.reports.back();
    std::cout << "final eval: epoch " << last.epoch << " uar " << last.uar << "\n";
    print_confusion(std::cout, last);
  }
  if (!metrics_path.empty()) {
    std::vector<MetricsRow> rows;
    for (const auto& rep : result.reports)
      rows.push_back(to_row(rep, "train", ablation_mode_name(config.mode),
                            config.seed));
    write_metrics_csv(metrics_path, rows, config.model.n_emotions);
    std::cout << "metrics written to " << metrics_path << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& metrics_path, bool do_strip, int threads) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (do_strip) ckpt = strip_aux(ckpt);
  std::vector<UtteranceExample> data = read_corpus(data_path);
  MetricsReport rep = evaluate_checkpoint(ckpt, data, threads);

  std::cout << "examples " << rep.n_examples << "\nuar " << rep.uar << "\n";
  for (int c = 0; c < rep.n_classes; ++c)
    std::cout << "recall_" << c << " " << rep.recalls[c] << "\n";
  print_confusion(std::cout, rep);

  std::vector<MetricsRow> rows{
      to_row(rep, "eval", ablation_mode_name(ckpt.params.mode), 0)};
  write_metrics_csv(metrics_path, rows, rep.n_classes);
  std::cout << "metrics written to " << metrics_path << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& modes_csv,
               const std::string& seeds_csv, const std::string& out_path,
               const std::string& data_path, const std::string& eval_path,
               bool quiet) {
  TrainConfig config = TrainConfig::from_kv(KvFile::load(config_path));
  if (!data_path.empty()) config.data_path = data_path;
  if (!eval_path.empty()) config.eval_path = eval_path;
  config.validate();
  if (config.data_path.empty() || config.eval_path.empty())
    throw std::runtime_error(
        "ablate: both a training corpus (data_path) and a held-out corpus "
        "(eval_path) are required");

  std::vector<std::string> modes = split_csv_list(modes_csv);
  if (modes.empty()) throw std::runtime_error("ablate: --modes is empty");
  for (const auto& m : modes) parse_ablation_mode(m);  // validate early

  std::vector<uint64_t> seeds;
  for (const auto& s : split_csv_list(seeds_csv))
    seeds.push_back(static_cast<uint64_t>(std::stoull(s)));
  if (seeds.empty()) throw std::runtime_error("ablate: --seeds is empty");

  std::vector<UtteranceExample> train_data = read_corpus(config.data_path);
  std::vector<UtteranceExample> eval_data = read_corpus(config.eval_path);

  AblationTable table = ablate(config, modes, seeds, train_data, eval_data,
                               quiet ? nullptr : &std::cout);
  write_ablation_csv(out_path, table);
  std::cout << "ablation table written to " << out_path << "\n";
  for (const auto& m : modes)
    std::cout << "median uar " << m << ": " << table.median_uar.at(m) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal-fusion emotion recognizer with ASR error detection "
               "and correction"};
  app.require_subcommand(1);

  // gen-data
  std::string gd_spec, gd_corrupt, gd_out, gd_eval_out;
  int64_t gd_n = 0, gd_eval_n = 0, gd_seed = -1;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen->add_option("--spec", gd_spec, "corpus spec key=value file");
  gen->add_option("--corrupt", gd_corrupt, "corruption spec key=value file");
  gen->add_option("--n", gd_n, "number of examples")->required();
  gen->add_option("--out", gd_out, "output corpus path")->required();
  gen->add_option("--seed", gd_seed, "override both spec seeds");
  gen->add_option("--eval-out", gd_eval_out,
                  "also write a held-out corpus continuing the ids");
  gen->add_option("--eval-n", gd_eval_n, "held-out example count");

  // align
  std::string al_hyp, al_ref;
  CLI::App* al = app.add_subcommand("align", "label hypothesis tokens K/D/C");
  al->add_option("--hyp", al_hyp, "hypothesis file: 'id tok tok ...' per line")
      ->required();
  al->add_option("--ref", al_ref, "reference file, same ids")->required();

  // train
  std::string tr_config, tr_data, tr_out, tr_eval, tr_metrics;
  bool tr_quiet = false;
  CLI::App* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", tr_config, "trainer + model key=value file")
      ->required();
  tr->add_option("--data", tr_data, "training corpus (overrides data_path)");
  tr->add_option("--out", tr_out, "checkpoint output path")->required();
  tr->add_option("--eval", tr_eval, "held-out corpus (overrides eval_path)");
  tr->add_option("--metrics", tr_metrics, "write the eval history as CSV");
  tr->add_flag("--quiet", tr_quiet, "suppress progress lines");

  // eval
  std::string ev_ckpt, ev_data, ev_metrics;
  bool ev_strip = false;
  int ev_threads = 1;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "corpus path")->required();
  ev->add_option("--metrics", ev_metrics, "metrics CSV output path")->required();
  ev->add_flag("--strip-aux", ev_strip,
               "drop the detector/corrector tensors before evaluating");
  ev->add_option("--threads", ev_threads, "evaluation worker threads");

  // ablate
  std::string ab_config, ab_modes, ab_seeds, ab_out, ab_data, ab_eval;
  bool ab_quiet = false;
  CLI::App* ab = app.add_subcommand("ablate", "train/evaluate a mode x seed grid");
  ab->add_option("--config", ab_config, "trainer + model key=value file")
      ->required();
  ab->add_option("--modes", ab_modes, "comma-separated ablation modes")
      ->required();
  ab->add_option("--seeds", ab_seeds, "comma-separated seeds")->required();
  ab->add_option("--out", ab_out, "ablation CSV output path")->required();
  ab->add_option("--data", ab_data, "training corpus (overrides data_path)");
  ab->add_option("--eval", ab_eval, "held-out corpus (overrides eval_path)");
  ab->add_flag("--quiet", ab_quiet, "suppress progress lines");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(gd_spec, gd_corrupt, gd_n, gd_out, gd_seed,
                          gd_eval_out, gd_eval_n);
    if (al->parsed()) return cmd_align(al_hyp, al_ref);
    if (tr->parsed())
      return cmd_train(tr_config, tr_data, tr_out, tr_eval, tr_metrics, tr_quiet);
    if (ev->parsed())
      return cmd_eval(ev_ckpt, ev_data, ev_metrics, ev_strip, ev_threads);
    if (ab->parsed())
      return cmd_ablate(ab_config, ab_modes, ab_seeds, ab_out, ab_data, ab_eval,
                        ab_quiet);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}
