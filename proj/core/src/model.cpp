#include "mfaec/model.hpp"

#include <cmath>
#include <stdexcept>

#include "mfaec/rng.hpp"

namespace mfaec {

namespace ops = ::mfaec::ops;

const char* ablation_mode_name(AblationMode mode) {
  switch (mode) {
    case AblationMode::kFull: return "full";
    case AblationMode::kNoAed: return "no-aed";
    case AblationMode::kNoAec: return "no-aec";
    case AblationMode::kNoMf: return "no-mf";
  }
  throw std::runtime_error("ablation_mode_name: bad mode");
}

AblationMode parse_ablation_mode(const std::string& name) {
  if (name == "full") return AblationMode::kFull;
  if (name == "no-aed") return AblationMode::kNoAed;
  if (name == "no-aec") return AblationMode::kNoAec;
  if (name == "no-mf") return AblationMode::kNoMf;
  throw std::runtime_error("unknown ablation mode '" + name +
                           "' (expected full, no-aed, no-aec, no-mf)");
}

void ModelConfig::validate() const {
  if (vocab_size <= Vocab::kNumReserved)
    throw std::runtime_error("model config: vocab_size must exceed the reserved ids");
  if (n_emotions < 2) throw std::runtime_error("model config: n_emotions must be >= 2");
  if (frame_dim < 1) throw std::runtime_error("model config: frame_dim must be >= 1");
  if (downsample < 1) throw std::runtime_error("model config: downsample must be >= 1");
  if (d < 1) throw std::runtime_error("model config: d must be >= 1");
  if (heads < 1 || d % heads != 0)
    throw std::runtime_error("model config: heads must divide d");
  if (enc_layers_speech < 1 || enc_layers_text < 1)
    throw std::runtime_error("model config: encoder layer counts must be >= 1");
  if (dec_max_len < 2)
    throw std::runtime_error("model config: dec_max_len must be >= 2 (<bos>/<eos> room)");
  if (max_pos < 1) throw std::runtime_error("model config: max_pos must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::runtime_error("model config: dropout must be in [0,1)");
  if (!(ln_eps > 0.0)) throw std::runtime_error("model config: ln_eps must be > 0");
}

ModelConfig ModelConfig::from_kv(const KvFile& kv) {
  ModelConfig c;
  c.vocab_size = static_cast<int>(kv.get_int("vocab_size", c.vocab_size));
  c.n_emotions = static_cast<int>(kv.get_int("n_emotions", c.n_emotions));
  c.frame_dim = static_cast<int>(kv.get_int("frame_dim", c.frame_dim));
  c.downsample = static_cast<int>(kv.get_int("downsample", c.downsample));
  c.d = static_cast<int>(kv.get_int("d", c.d));
  c.heads = static_cast<int>(kv.get_int("heads", c.heads));
  c.enc_layers_speech = static_cast<int>(kv.get_int("enc_layers_speech", c.enc_layers_speech));
  c.enc_layers_text = static_cast<int>(kv.get_int("enc_layers_text", c.enc_layers_text));
  c.dec_max_len = static_cast<int>(kv.get_int("dec_max_len", c.dec_max_len));
  c.max_pos = static_cast<int>(kv.get_int("max_pos", c.max_pos));
  c.dropout = kv.get_double("dropout", c.dropout);
  c.ln_eps = kv.get_double("ln_eps", c.ln_eps);
  c.validate();
  return c;
}

KvFile ModelConfig::to_kv() const {
  KvFile kv;
  kv.set_int("vocab_size", vocab_size);
  kv.set_int("n_emotions", n_emotions);
  kv.set_int("frame_dim", frame_dim);
  kv.set_int("downsample", downsample);
  kv.set_int("d", d);
  kv.set_int("heads", heads);
  kv.set_int("enc_layers_speech", enc_layers_speech);
  kv.set_int("enc_layers_text", enc_layers_text);
  kv.set_int("dec_max_len", dec_max_len);
  kv.set_int("max_pos", max_pos);
  kv.set_double("dropout", dropout);
  kv.set_double("ln_eps", ln_eps);
  return kv;
}

namespace {

using NameShape = std::pair<std::string, std::vector<int>>;

void push_attn(std::vector<NameShape>& out, const std::string& prefix, int d) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back({prefix + "." + w, {d, d}});
  for (const char* b : {"bq", "bk", "bv", "bo"}) out.push_back({prefix + "." + b, {d}});
}

void push_ln(std::vector<NameShape>& out, const std::string& prefix, int d) {
  out.push_back({prefix + ".g", {d}});
  out.push_back({prefix + ".b", {d}});
}

void push_ffn(std::vector<NameShape>& out, const std::string& prefix, int d) {
  out.push_back({prefix + ".w1", {2 * d, d}});
  out.push_back({prefix + ".b1", {2 * d}});
  out.push_back({prefix + ".w2", {d, 2 * d}});
  out.push_back({prefix + ".b2", {d}});
}

// Attention + FFN residual block, each sublayer post-layer-normed; encoder
// layers and CME blocks share this layout.
void push_block(std::vector<NameShape>& out, const std::string& prefix, int d) {
  push_attn(out, prefix + ".attn", d);
  push_ln(out, prefix + ".ln1", d);
  push_ffn(out, prefix + ".ffn", d);
  push_ln(out, prefix + ".ln2", d);
}

std::vector<NameShape> param_specs(const ModelConfig& c, AblationMode mode) {
  std::vector<NameShape> out;
  const int d = c.d;
  out.push_back({"emb.te", {c.vocab_size, d}});
  out.push_back({"emb.pe_t", {c.max_pos, d}});
  out.push_back({"emb.pe_s", {c.max_pos, d}});
  out.push_back({"spe.in.w", {d, c.downsample * c.frame_dim}});
  out.push_back({"spe.in.b", {d}});
  for (int i = 0; i < c.enc_layers_speech; ++i)
    push_block(out, "spe.l" + std::to_string(i), d);
  for (int i = 0; i < c.enc_layers_text; ++i)
    push_block(out, "txt.l" + std::to_string(i), d);
  if (mode != AblationMode::kNoAed) {
    out.push_back({"aed.fc.w", {3, d}});
    out.push_back({"aed.fc.b", {3}});
  }
  if (mode != AblationMode::kNoAec) {
    out.push_back({"aec.in.w", {d, 2 * d}});
    out.push_back({"aec.in.b", {d}});
    push_attn(out, "aec.dec.self", d);
    push_ln(out, "aec.dec.ln1", d);
    push_attn(out, "aec.dec.cross", d);
    push_ln(out, "aec.dec.ln2", d);
    push_ffn(out, "aec.dec.ffn", d);
    push_ln(out, "aec.dec.ln3", d);
    out.push_back({"aec.out.w", {c.vocab_size, d}});
    out.push_back({"aec.out.b", {c.vocab_size}});
  }
  if (mode != AblationMode::kNoMf) {
    push_block(out, "cme.s", d);
    push_block(out, "cme.t", d);
    push_attn(out, "hma.s.attn", d);
    out.push_back({"hma.s.mask.w", {d, 2 * d}});
    out.push_back({"hma.s.mask.b", {d}});
    push_attn(out, "hma.t.attn", d);
    out.push_back({"hma.t.mask.w", {d, 2 * d}});
    out.push_back({"hma.t.mask.b", {d}});
    out.push_back({"mir.s.conv.w", {d, d}});
    out.push_back({"mir.s.conv.b", {d}});
    out.push_back({"mir.s.prelu", {d}});
    out.push_back({"mir.t.conv.w", {d, d}});
    out.push_back({"mir.t.conv.b", {d}});
    out.push_back({"mir.t.prelu", {d}});
    push_ln(out, "mir.ln", d);
  }
  const int cls_in = mode == AblationMode::kNoMf ? 2 * d : d;
  out.push_back({"cls.fc.w", {c.n_emotions, cls_in}});
  out.push_back({"cls.fc.b", {c.n_emotions}});
  return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<ParamShape> param_shapes(const ModelConfig& config, AblationMode mode) {
  return param_specs(config, mode);
}

std::vector<std::string> param_names(const ModelConfig& config, AblationMode mode) {
  std::vector<std::string> out;
  for (auto& [name, shape] : param_specs(config, mode)) out.push_back(name);
  return out;
}

bool is_aux_param(const std::string& name) {
  return name.rfind("aed.", 0) == 0 || name.rfind("aec.", 0) == 0;
}

ModelParams init_params(const ModelConfig& config, AblationMode mode, uint64_t seed) {
  config.validate();
  ModelParams mp;
  mp.config = config;
  mp.mode = mode;
  Rng rng(derive_seed(seed, 0x696e6974ULL));  // init stream
  for (auto& [name, shape] : param_specs(config, mode)) {
    Param& p = mp.set.add(name, shape);
    std::vector<double>& v = *p.values;
    if (ends_with(name, ".g")) {
      for (double& x : v) x = 1.0;
    } else if (ends_with(name, "prelu")) {
      for (double& x : v) x = 0.25;
    } else if (shape.size() == 1) {
      // biases (and LN shifts) start at zero
    } else {
      const double scale = 1.0 / std::sqrt(static_cast<double>(shape[1]));
      for (double& x : v) x = rng.normal(0.0, scale);
    }
  }
  return mp;
}

namespace {

ops::AttentionProj attn_proj(const ModelParams& mp, const std::string& prefix) {
  return {&mp.set.at(prefix + ".wq"), &mp.set.at(prefix + ".bq"),
          &mp.set.at(prefix + ".wk"), &mp.set.at(prefix + ".bk"),
          &mp.set.at(prefix + ".wv"), &mp.set.at(prefix + ".bv"),
          &mp.set.at(prefix + ".wo"), &mp.set.at(prefix + ".bo")};
}

Tensor ln_affine(Tape& tape, ParamBinder& bind, const ModelParams& mp,
                 const std::string& prefix, const Tensor& x) {
  Tensor n = ops::layer_norm(tape, x, mp.config.ln_eps);
  n = ops::mul_rows(tape, n, bind(mp.at(prefix + ".g")));
  return ops::add_rows(tape, n, bind(mp.at(prefix + ".b")));
}

Tensor ffn(Tape& tape, ParamBinder& bind, const ModelParams& mp,
           const std::string& prefix, const Tensor& x) {
  Tensor h = ops::affine(tape, x, bind(mp.at(prefix + ".w1")), bind(mp.at(prefix + ".b1")));
  h = ops::tanh(tape, h);
  return ops::affine(tape, h, bind(mp.at(prefix + ".w2")), bind(mp.at(prefix + ".b2")));
}

// y = LN(q + MHA(q, ctx)); out = LN(y + FFN(y)). Self-attention when
// ctx == q; cross-attention otherwise.
Tensor residual_block(Tape& tape, ParamBinder& bind, const ModelParams& mp,
                      const std::string& prefix, const Tensor& q, const Tensor& ctx,
                      const Tensor* score_mask = nullptr) {
  Tensor a = ops::multi_head_attention(tape, bind, attn_proj(mp, prefix + ".attn"), q,
                                       ctx, mp.config.heads, score_mask);
  Tensor y = ln_affine(tape, bind, mp, prefix + ".ln1", ops::add(tape, q, a));
  Tensor f = ffn(tape, bind, mp, prefix + ".ffn", y);
  return ln_affine(tape, bind, mp, prefix + ".ln2", ops::add(tape, y, f));
}

Tensor position_rows(Tape& tape, ParamBinder& bind, const ModelParams& mp,
                     const std::string& table, int len, const char* what) {
  if (len > mp.config.max_pos)
    throw std::runtime_error(std::string(what) + " length " + std::to_string(len) +
                             " exceeds position capacity " +
                             std::to_string(mp.config.max_pos));
  return ops::slice_rows(tape, bind(mp.at(table)), 0, len);
}

}  // namespace

Tensor encode_speech(Tape& tape, ParamBinder& bind, const ModelParams& params,
                     const std::vector<double>& frames, int m, int frame_dim) {
  const ModelConfig& c = params.config;
  if (frame_dim != c.frame_dim)
    throw std::runtime_error("encode_speech: frame_dim " + std::to_string(frame_dim) +
                             " does not match config " + std::to_string(c.frame_dim));
  if (m < c.downsample)
    throw std::runtime_error("encode_speech: " + std::to_string(m) +
                             " frames is shorter than the downsample factor " +
                             std::to_string(c.downsample));
  if (frames.size() != static_cast<size_t>(m) * frame_dim)
    throw std::runtime_error("encode_speech: frame buffer size mismatch");
  const int mp = m / c.downsample;
  Tensor x = make_constant({m, frame_dim}, frames);
  if (mp * c.downsample != m) x = ops::slice_rows(tape, x, 0, mp * c.downsample);
  x = ops::reshape(tape, x, {mp, c.downsample * frame_dim});
  x = ops::affine(tape, x, bind(params.at("spe.in.w")), bind(params.at("spe.in.b")));
  x = ops::add(tape, x, position_rows(tape, bind, params, "emb.pe_s", mp, "speech"));
  for (int i = 0; i < c.enc_layers_speech; ++i)
    x = residual_block(tape, bind, params, "spe.l" + std::to_string(i), x, x);
  return x;
}

Tensor encode_text(Tape& tape, ParamBinder& bind, const ModelParams& params,
                   const TokenSequence& tokens) {
  const ModelConfig& c = params.config;
  if (tokens.empty()) throw std::runtime_error("encode_text: empty token sequence");
  for (int t : tokens)
    if (t < 0 || t >= c.vocab_size)
      throw std::runtime_error("encode_text: token id " + std::to_string(t) +
                               " outside vocab of size " + std::to_string(c.vocab_size));
  const int n = static_cast<int>(tokens.size());
  Tensor x = ops::gather_rows(tape, bind(params.at("emb.te")), tokens);
  x = ops::add(tape, x, position_rows(tape, bind, params, "emb.pe_t", n, "text"));
  for (int i = 0; i < c.enc_layers_text; ++i)
    x = residual_block(tape, bind, params, "txt.l" + std::to_string(i), x, x);
  return x;
}

Tensor aed_head(Tape& tape, ParamBinder& bind, const ModelParams& params,
                const Tensor& h_t) {
  if (!params.has("aed.fc.w"))
    throw std::runtime_error("aed_head: detector parameters absent in mode " +
                             std::string(ablation_mode_name(params.mode)));
  Tensor logits =
      ops::affine(tape, h_t, bind(params.at("aed.fc.w")), bind(params.at("aed.fc.b")));
  return ops::softmax_rows(tape, logits);
}

std::vector<Tensor> aec_decode_teacher_forced(
    Tape& tape, ParamBinder& bind, const ModelParams& params, const Tensor& h_t,
    const std::vector<int>& change_positions,
    const std::vector<TokenSequence>& targets, bool allow_empty_targets) {
  const ModelConfig& c = params.config;
  if (!params.has("aec.in.w"))
    throw std::runtime_error("aec_decode: corrector parameters absent in mode " +
                             std::string(ablation_mode_name(params.mode)));
  if (change_positions.size() != targets.size())
    throw std::runtime_error("aec_decode: " + std::to_string(change_positions.size()) +
                             " positions for " + std::to_string(targets.size()) +
                             " targets");
  const int n = h_t.rows();
  std::vector<Tensor> out;
  out.reserve(targets.size());
  for (size_t k = 0; k < targets.size(); ++k) {
    const int pos = change_positions[k];
    if (pos < 0 || pos >= n)
      throw std::runtime_error("aec_decode: change position " + std::to_string(pos) +
                               " outside hypothesis of length " + std::to_string(n));
    const TokenSequence& target = targets[k];
    if (target.empty() && !allow_empty_targets)
      throw std::runtime_error("aec_decode: empty target at position " +
                               std::to_string(pos));
    const int steps = static_cast<int>(target.size()) + 1;  // tokens then <eos>
    if (steps > c.dec_max_len)
      throw std::runtime_error("aec_decode: target of " +
                               std::to_string(target.size()) +
                               " tokens exceeds decode cap " +
                               std::to_string(c.dec_max_len));
    for (int t : target)
      if (t < 0 || t >= c.vocab_size)
        throw std::runtime_error("aec_decode: target token id " + std::to_string(t) +
                                 " outside vocab");
    // Teacher forcing: inputs are <bos> then the gold target, one step ahead
    // of the outputs (gold outputs are the target then <eos>).
    TokenSequence z;
    z.reserve(static_cast<size_t>(steps));
    z.push_back(Vocab::kBos);
    z.insert(z.end(), target.begin(), target.end());
    Tensor emb = ops::gather_rows(tape, bind(params.at("emb.te")), z);
    emb = ops::add(tape, emb,
                   position_rows(tape, bind, params, "emb.pe_t", steps, "decode"));
    Tensor h_k = ops::gather_rows(tape, h_t, std::vector<int>(static_cast<size_t>(steps), pos));
    Tensor x = ops::affine(tape, ops::concat_cols(tape, emb, h_k),
                           bind(params.at("aec.in.w")), bind(params.at("aec.in.b")));
    Tensor mask = ops::causal_mask(steps);
    Tensor a = ops::multi_head_attention(tape, bind, attn_proj(params, "aec.dec.self"),
                                         x, x, c.heads, &mask);
    Tensor y = ln_affine(tape, bind, params, "aec.dec.ln1", ops::add(tape, x, a));
    Tensor cr = ops::multi_head_attention(tape, bind, attn_proj(params, "aec.dec.cross"),
                                          y, h_t, c.heads);
    y = ln_affine(tape, bind, params, "aec.dec.ln2", ops::add(tape, y, cr));
    Tensor f = ffn(tape, bind, params, "aec.dec.ffn", y);
    y = ln_affine(tape, bind, params, "aec.dec.ln3", ops::add(tape, y, f));
    Tensor logits =
        ops::affine(tape, y, bind(params.at("aec.out.w")), bind(params.at("aec.out.b")));
    out.push_back(ops::softmax_rows(tape, logits));
  }
  return out;
}

Tensor cme_block(Tape& tape, ParamBinder& bind, const ModelParams& params,
                 const std::string& prefix, const Tensor& query, const Tensor& context) {
  if (query.cols() != params.config.d || context.cols() != params.config.d)
    throw std::runtime_error(prefix + ": feature size mismatch (query " +
                             shape_str(query.shape) + ", context " +
                             shape_str(context.shape) + ", d=" +
                             std::to_string(params.config.d) + ")");
  return residual_block(tape, bind, params, prefix, query, context);
}

Tensor hma(Tape& tape, ParamBinder& bind, const ModelParams& params, int modality,
           const Tensor& h_i_spe, const Tensor& h_st, Tensor* h_share_out) {
  const std::string prefix = modality == 0 ? "hma.s" : "hma.t";
  const int total = h_st.rows();
  const int own = h_i_spe.rows();
  if (own > total)
    throw std::runtime_error(prefix + ": modality length " + std::to_string(own) +
                             " exceeds joint length " + std::to_string(total));
  Tensor share = ops::multi_head_attention(tape, bind, attn_proj(params, prefix + ".attn"),
                                           h_st, h_i_spe, params.config.heads);
  if (h_share_out) *h_share_out = share;
  // Zero-padded canvas: the modality's rows at its own positions on the
  // joint timeline, zeros elsewhere, then feature concat with H_ST.
  const int d = params.config.d;
  Tensor canvas;
  if (own == total) {
    canvas = h_i_spe;
  } else if (modality == 0) {
    canvas = ops::concat_rows(tape, h_i_spe, make_zeros({total - own, d}));
  } else {
    canvas = ops::concat_rows(tape, make_zeros({total - own, d}), h_i_spe);
  }
  Tensor mask = ops::affine(tape, ops::concat_cols(tape, canvas, h_st),
                            bind(params.at(prefix + ".mask.w")),
                            bind(params.at(prefix + ".mask.b")));
  mask = ops::sigmoid(tape, mask);
  return ops::mul(tape, share, mask);
}

Tensor mir(Tape& tape, ParamBinder& bind, const ModelParams& params,
           const Tensor& h_st, const Tensor& h_s_b, const Tensor& h_t_b) {
  auto branch = [&](const std::string& prefix, const Tensor& x) {
    Tensor y = ops::affine(tape, x, bind(params.at(prefix + ".conv.w")),
                           bind(params.at(prefix + ".conv.b")));
    return ops::prelu(tape, y, bind(params.at(prefix + ".prelu")));
  };
  Tensor sum = ops::add(tape, branch("mir.s", h_s_b), branch("mir.t", h_t_b));
  return ln_affine(tape, bind, params, "mir.ln", ops::add(tape, h_st, sum));
}

Tensor fuse(Tape& tape, const Tensor& h_s_spe, const Tensor& h_t_spe,
            const Tensor& h_st_inv) {
  if (h_s_spe.cols() != h_t_spe.cols() || h_s_spe.cols() != h_st_inv.cols())
    throw std::runtime_error("fuse: feature sizes differ (" +
                             shape_str(h_s_spe.shape) + ", " + shape_str(h_t_spe.shape) +
                             ", " + shape_str(h_st_inv.shape) + ")");
  return ops::concat_rows(tape, ops::concat_rows(tape, h_s_spe, h_t_spe), h_st_inv);
}

Tensor classify(Tape& tape, ParamBinder& bind, const ModelParams& params,
                const Tensor& input) {
  if (input.rows() < 1) throw std::runtime_error("classify: empty input");
  Tensor pooled = ops::mean_rows(tape, input);
  Tensor logits = ops::affine(tape, pooled, bind(params.at("cls.fc.w")),
                              bind(params.at("cls.fc.b")));
  return ops::softmax_rows(tape, logits);
}

Tensor combine_losses(Tape& tape, const Tensor& loss_emo, const Tensor* loss_d,
                      const Tensor* loss_e, double beta, double gamma) {
  Tensor total = loss_emo;
  if (loss_d && loss_d->values)
    total = ops::add(tape, total, ops::scale(tape, *loss_d, beta * gamma));
  if (loss_e && loss_e->values)
    total = ops::add(tape, total, ops::scale(tape, *loss_e, beta));
  return total;
}

namespace {

// Inverted dropout as a constant mask; a null rng (inference) is a no-op.
Tensor maybe_dropout(Tape& tape, const ModelParams& params, Rng* rng, const Tensor& x) {
  const double p = params.config.dropout;
  if (p <= 0.0 || rng == nullptr) return x;
  const double keep = 1.0 - p;
  std::vector<double> mask(static_cast<size_t>(x.numel()));
  for (double& v : mask) v = rng->uniform() < keep ? 1.0 / keep : 0.0;
  return ops::mul(tape, x, make_constant(x.shape, std::move(mask)));
}

// Shared emotion path: encoders, then the fusion stack (or mean-pool concat
// in no-mf mode), then the classifier. forward_train and forward_infer both
// call this, so at dropout 0 their emotion probabilities are bitwise
// identical. Dropout sits between stages, keeping every stage op pure.
Tensor emotion_path(Tape& tape, ParamBinder& bind, const ModelParams& params,
                    const UtteranceExample& ex, const TokenSequence& hyp,
                    ForwardBundle* b, Rng* drop) {
  Tensor h_s = encode_speech(tape, bind, params, ex.frames, ex.m, ex.frame_dim);
  Tensor h_t = encode_text(tape, bind, params, hyp);
  if (b) {
    b->h_s = h_s;
    b->h_t = h_t;
  }
  h_s = maybe_dropout(tape, params, drop, h_s);
  h_t = maybe_dropout(tape, params, drop, h_t);
  Tensor cls_in;
  if (params.mode == AblationMode::kNoMf) {
    cls_in = ops::concat_cols(tape, ops::mean_rows(tape, h_s), ops::mean_rows(tape, h_t));
  } else {
    Tensor h_s_spe = maybe_dropout(
        tape, params, drop, cme_block(tape, bind, params, "cme.s", h_s, h_t));
    Tensor h_t_spe = maybe_dropout(
        tape, params, drop, cme_block(tape, bind, params, "cme.t", h_t, h_s));
    Tensor h_st = ops::concat_rows(tape, h_s, h_t);
    Tensor h_s_share, h_t_share;
    Tensor h_s_b = hma(tape, bind, params, 0, h_s_spe, h_st, &h_s_share);
    Tensor h_t_b = hma(tape, bind, params, 1, h_t_spe, h_st, &h_t_share);
    Tensor h_st_inv =
        maybe_dropout(tape, params, drop, mir(tape, bind, params, h_st, h_s_b, h_t_b));
    Tensor h_st_fus = fuse(tape, h_s_spe, h_t_spe, h_st_inv);
    if (b) {
      b->h_s_spe = h_s_spe;
      b->h_t_spe = h_t_spe;
      b->h_st = h_st;
      b->h_s_share = h_s_share;
      b->h_t_share = h_t_share;
      b->h_s_b = h_s_b;
      b->h_t_b = h_t_b;
      b->h_st_inv = h_st_inv;
      b->h_st_fus = h_st_fus;
    }
    cls_in = h_st_fus;
  }
  Tensor probs = classify(tape, bind, params, cls_in);
  if (b) b->emotion_probs = probs;
  return probs;
}

TokenSequence effective_hypothesis(const UtteranceExample& ex) {
  // An ASR pass that deleted everything still has to feed the text encoder;
  // a lone <pad> stands in and the auxiliary losses are skipped.
  if (ex.asr.empty()) return {Vocab::kPad};
  return ex.asr;
}

}  // namespace

TrainResult forward_train(Tape& tape, ParamBinder& bind, const ModelParams& params,
                          const UtteranceExample& example, double beta, double gamma,
                          Rng* dropout_rng) {
  const ModelConfig& c = params.config;
  if (example.emotion < 0 || example.emotion >= c.n_emotions)
    throw std::runtime_error("forward_train: emotion label " +
                             std::to_string(example.emotion) + " outside 0.." +
                             std::to_string(c.n_emotions - 1));
  if (c.dropout > 0.0 && dropout_rng == nullptr)
    throw std::runtime_error("forward_train: dropout " + std::to_string(c.dropout) +
                             " needs a noise source");
  TrainResult r;
  const TokenSequence hyp = effective_hypothesis(example);
  Tensor probs = emotion_path(tape, bind, params, example, hyp, &r.bundle, dropout_rng);
  r.loss_emo = ops::nll_rows(tape, probs, {example.emotion});

  const bool want_aed = params.mode != AblationMode::kNoAed;
  const bool want_aec = params.mode != AblationMode::kNoAec;
  const bool alignable = !example.asr.empty();
  r.aux_skipped = (want_aed || want_aec) && !alignable;

  if (alignable && (want_aed || want_aec)) {
    const AlignmentLabeling labeling = label_edits(example.asr, example.transcript);
    if (want_aed) {
      std::vector<int> gold;
      gold.reserve(labeling.labels.size());
      for (EditLabel l : labeling.labels) gold.push_back(static_cast<int>(l));
      r.bundle.aed_probs = aed_head(tape, bind, params, r.bundle.h_t);
      r.loss_d = ops::nll_rows(tape, r.bundle.aed_probs, gold);
    }
    if (want_aec) {
      std::vector<int> positions;
      std::vector<TokenSequence> targets;
      if (want_aed) {
        for (const auto& [pos, target] : labeling.targets) {
          positions.push_back(pos);
          targets.push_back(target);
        }
      } else {
        // Detector-less: correct from scratch, every position a candidate.
        // Kept tokens re-emit themselves, deletions emit <eos> immediately.
        for (size_t i = 0; i < labeling.labels.size(); ++i) {
          positions.push_back(static_cast<int>(i));
          switch (labeling.labels[i]) {
            case EditLabel::kKeep:
              targets.push_back({example.asr[i]});
              break;
            case EditLabel::kDelete:
              targets.push_back({});
              break;
            case EditLabel::kChange:
              targets.push_back(labeling.targets.at(static_cast<int>(i)));
              break;
          }
        }
      }
      // The raw labeling is uncapped; training truncates to the decode cap.
      const size_t cap = static_cast<size_t>(c.dec_max_len - 1);
      for (auto& target : targets)
        if (target.size() > cap) target.resize(cap);
      if (!positions.empty()) {
        r.bundle.aec_steps = aec_decode_teacher_forced(
            tape, bind, params, r.bundle.h_t, positions, targets,
            /*allow_empty_targets=*/!want_aed);
        r.bundle.change_positions = positions;
        Tensor loss_e;
        for (size_t k = 0; k < targets.size(); ++k) {
          TokenSequence gold = targets[k];
          gold.push_back(Vocab::kEos);
          Tensor term = ops::nll_rows(tape, r.bundle.aec_steps[k], gold);
          loss_e = k == 0 ? term : ops::add(tape, loss_e, term);
        }
        r.loss_e = loss_e;
      }
    }
  }

  r.loss_total = combine_losses(tape, r.loss_emo, &r.loss_d, &r.loss_e, beta, gamma);
  return r;
}

Tensor forward_infer(Tape& tape, ParamBinder& bind, const ModelParams& params,
                     const UtteranceExample& example, ForwardBundle* bundle_out) {
  return emotion_path(tape, bind, params, example, effective_hypothesis(example),
                      bundle_out, /*drop=*/nullptr);
}

}  // namespace mfaec
