#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfaec/adam.hpp"
#include "mfaec/align.hpp"
#include "mfaec/kvfile.hpp"
#include "mfaec/ops.hpp"
#include "mfaec/rng.hpp"
#include "mfaec/synthdata.hpp"
#include "mfaec/tensor.hpp"

namespace mfaec {

// Which heads/fusion stages the model carries. `no-mf` replaces the fusion
// stack with per-modality mean pooling + feature concat; `no-aed` drops the
// detector and trains the corrector on every hypothesis position; `no-aec`
// drops the corrector.
enum class AblationMode : int { kFull = 0, kNoAed = 1, kNoAec = 2, kNoMf = 3 };

const char* ablation_mode_name(AblationMode mode);
AblationMode parse_ablation_mode(const std::string& name);

struct ModelConfig {
  int vocab_size = 64;
  int n_emotions = 4;
  int frame_dim = 16;
  int downsample = 4;        // speech frames folded into one encoder step
  int d = 64;                // model width
  int heads = 4;
  int enc_layers_speech = 2;
  int enc_layers_text = 2;
  int dec_max_len = 16;      // corrector step cap (target tokens + <eos>), >= 2
  int max_pos = 64;          // learned position-table capacity
  double dropout = 0.0;      // training-pass rate; 0 keeps every pass exact
  double ln_eps = 1e-5;

  void validate() const;
  static ModelConfig from_kv(const KvFile& kv);
  KvFile to_kv() const;
  bool operator==(const ModelConfig&) const = default;
};

// All learned tensors, keyed by dotted names ("txt.l0.attn.wq", "cls.fc.w",
// ...). Shapes are derivable from the config and mode alone. Names under
// "aed." / "aec." belong exclusively to the auxiliary heads; everything else
// is the emotion path.
struct ModelParams {
  ModelConfig config;
  AblationMode mode = AblationMode::kFull;
  ParamSet set;

  ModelParams() = default;
  ModelParams(ModelParams&&) = default;
  ModelParams& operator=(ModelParams&&) = default;
  ModelParams(const ModelParams&) = delete;  // params alias their storage
  ModelParams& operator=(const ModelParams&) = delete;

  const Param& at(const std::string& name) const { return set.at(name); }
  bool has(const std::string& name) const { return set.contains(name); }
};

// Registers every tensor the mode needs and fills it with seeded Gaussian
// init (weights at 1/sqrt(fan_in), biases zero, LN gain 1, PReLU slope 1/4).
ModelParams init_params(const ModelConfig& config, AblationMode mode, uint64_t seed);

// Expected parameter names and shapes for (config, mode), in registration
// order; checkpoint validation uses this to reject unknown or missing
// tensors and shape mismatches.
using ParamShape = std::pair<std::string, std::vector<int>>;
std::vector<ParamShape> param_shapes(const ModelConfig& config, AblationMode mode);
std::vector<std::string> param_names(const ModelConfig& config, AblationMode mode);
bool is_aux_param(const std::string& name);  // "aed." / "aec." prefix

// Activations of one forward pass. Probability tensors are rowwise
// distributions. In no-mf mode the fusion fields stay empty.
struct ForwardBundle {
  Tensor h_s;        // (m', d)
  Tensor h_t;        // (n, d)
  Tensor h_s_spe;    // (m', d)
  Tensor h_t_spe;    // (n, d)
  Tensor h_st;       // (m'+n, d)
  Tensor h_s_share;  // (m'+n, d)
  Tensor h_t_share;  // (m'+n, d)
  Tensor h_s_b;      // (m'+n, d)
  Tensor h_t_b;      // (m'+n, d)
  Tensor h_st_inv;   // (m'+n, d)
  Tensor h_st_fus;   // (2(m'+n), d)
  Tensor emotion_probs;           // (1, e)
  Tensor aed_probs;               // (n, 3); empty when the detector is off
  std::vector<Tensor> aec_steps;  // per change position: (steps, vocab)
  std::vector<int> change_positions;
};

struct TrainResult {
  ForwardBundle bundle;
  Tensor loss_emo;    // scalar
  Tensor loss_d;      // scalar; empty when absent
  Tensor loss_e;      // scalar; empty when absent
  Tensor loss_total;  // scalar
  bool aux_skipped = false;  // empty hypothesis: only the emotion loss ran
};

// --- stage ops (exposed for tests; forward_train composes them) ---

Tensor encode_speech(Tape& tape, ParamBinder& bind, const ModelParams& params,
                     const std::vector<double>& frames, int m, int frame_dim);
Tensor encode_text(Tape& tape, ParamBinder& bind, const ModelParams& params,
                   const TokenSequence& tokens);
Tensor aed_head(Tape& tape, ParamBinder& bind, const ModelParams& params,
                const Tensor& h_t);
// Teacher-forced corrector. Targets exclude <eos>; each decode runs
// |target|+1 steps and the final gold step is <eos>. Empty targets are an
// error unless allow_empty_targets (the detector-less mode trains deletions
// as an immediate <eos>).
std::vector<Tensor> aec_decode_teacher_forced(
    Tape& tape, ParamBinder& bind, const ModelParams& params, const Tensor& h_t,
    const std::vector<int>& change_positions,
    const std::vector<TokenSequence>& targets, bool allow_empty_targets = false);
// prefix in {"cme.s", "cme.t"}: cross-attention + residual + FC + residual,
// each sublayer layer-normed. Output length = query length.
Tensor cme_block(Tape& tape, ParamBinder& bind, const ModelParams& params,
                 const std::string& prefix, const Tensor& query,
                 const Tensor& context);
// modality 0 = speech (canvas rows [0, m')), 1 = text (rows [m', m'+n)).
// h_share_out, when given, receives the pre-mask cross-attention output.
Tensor hma(Tape& tape, ParamBinder& bind, const ModelParams& params, int modality,
           const Tensor& h_i_spe, const Tensor& h_st, Tensor* h_share_out = nullptr);
Tensor mir(Tape& tape, ParamBinder& bind, const ModelParams& params,
           const Tensor& h_st, const Tensor& h_s_b, const Tensor& h_t_b);
Tensor fuse(Tape& tape, const Tensor& h_s_spe, const Tensor& h_t_spe,
            const Tensor& h_st_inv);
Tensor classify(Tape& tape, ParamBinder& bind, const ModelParams& params,
                const Tensor& input);

// Auxiliary loss wiring: total = emo + beta * (gamma * d + e). Null d/e
// terms are simply absent. Exposed so the arithmetic is testable directly.
Tensor combine_losses(Tape& tape, const Tensor& loss_emo, const Tensor* loss_d,
                      const Tensor* loss_e, double beta, double gamma);

// --- full passes ---

// Joint training pass: emotion path plus whichever auxiliary heads the mode
// keeps, with losses wired as loss_emo + beta * (gamma * loss_d + loss_e).
// Correction targets longer than the decode cap are truncated (the raw
// labeling stays uncapped). When config.dropout > 0, inverted-dropout masks
// drawn from `dropout_rng` are applied between stages; inference never
// drops, so pass a null rng (or rate 0) wherever train/infer equality must
// be exact.
TrainResult forward_train(Tape& tape, ParamBinder& bind, const ModelParams& params,
                          const UtteranceExample& example, double beta, double gamma,
                          Rng* dropout_rng = nullptr);

// Emotion path only; bitwise-identical probabilities to forward_train on the
// same inputs and parameters. Needs no auxiliary parameters. `bundle_out`,
// when given, receives the emotion-path activations.
Tensor forward_infer(Tape& tape, ParamBinder& bind, const ModelParams& params,
                     const UtteranceExample& example,
                     ForwardBundle* bundle_out = nullptr);

}  // namespace mfaec
