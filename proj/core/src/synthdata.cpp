#include "mfaec/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mfaec/rng.hpp"

namespace mfaec {

namespace {

// Stream tags for derived seeds; utterance ids occupy the small integers.
constexpr uint64_t kProtoStream = 0x70726f746f0000ULL;
constexpr uint64_t kOffsetStream = 0x6f6666730000ULL;

void fail_spec(const std::string& what) {
  throw std::runtime_error("corpus spec: " + what);
}

}  // namespace

void CorpusSpec::validate() const {
  if (n_emotions < 2) fail_spec("n_emotions must be >= 2");
  if (keywords_per_emotion < 1) fail_spec("keywords_per_emotion must be >= 1");
  if (background_begin() >= vocab_size)
    fail_spec("vocab_size " + std::to_string(vocab_size) +
              " leaves no background ids after " +
              std::to_string(background_begin()) + " reserved+keyword ids");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail_spec("alpha must be in [0,1]");
  if (len_min < 1 || len_max < len_min) fail_spec("empty length range");
  if (frame_dim < 1) fail_spec("frame_dim must be >= 1");
  if (frames_per_token < 1) fail_spec("frames_per_token must be >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    fail_spec("noise_sigma must be finite and >= 0");
  if (!std::isfinite(emotion_gain)) fail_spec("emotion_gain must be finite");
}

int CorpusSpec::keyword_begin(int emotion) const {
  return Vocab::kNumReserved + emotion * keywords_per_emotion;
}

int CorpusSpec::background_begin() const {
  return Vocab::kNumReserved + n_emotions * keywords_per_emotion;
}

CorpusSpec CorpusSpec::from_kv(const KvFile& kv) {
  CorpusSpec s;
  s.vocab_size = static_cast<int>(kv.get_int("vocab_size", s.vocab_size));
  s.n_emotions = static_cast<int>(kv.get_int("n_emotions", s.n_emotions));
  s.keywords_per_emotion =
      static_cast<int>(kv.get_int("keywords_per_emotion", s.keywords_per_emotion));
  s.alpha = kv.get_double("alpha", s.alpha);
  s.len_min = static_cast<int>(kv.get_int("len_min", s.len_min));
  s.len_max = static_cast<int>(kv.get_int("len_max", s.len_max));
  s.frame_dim = static_cast<int>(kv.get_int("frame_dim", s.frame_dim));
  s.frames_per_token =
      static_cast<int>(kv.get_int("frames_per_token", s.frames_per_token));
  s.noise_sigma = kv.get_double("noise_sigma", s.noise_sigma);
  s.emotion_gain = kv.get_double("emotion_gain", s.emotion_gain);
  s.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(s.seed)));
  s.validate();
  return s;
}

KvFile CorpusSpec::to_kv() const {
  KvFile kv;
  kv.set_int("vocab_size", vocab_size);
  kv.set_int("n_emotions", n_emotions);
  kv.set_int("keywords_per_emotion", keywords_per_emotion);
  kv.set_double("alpha", alpha);
  kv.set_int("len_min", len_min);
  kv.set_int("len_max", len_max);
  kv.set_int("frame_dim", frame_dim);
  kv.set_int("frames_per_token", frames_per_token);
  kv.set_double("noise_sigma", noise_sigma);
  kv.set_double("emotion_gain", emotion_gain);
  kv.set_int("seed", static_cast<int64_t>(seed));
  return kv;
}

void CorruptionSpec::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(p_sub) || !prob(p_del) || !prob(p_ins))
    throw std::runtime_error("corruption spec: probabilities must be in [0,1]");
  if (p_sub + p_del > 1.0)
    throw std::runtime_error("corruption spec: p_sub + p_del must be <= 1");
}

CorruptionSpec CorruptionSpec::from_kv(const KvFile& kv) {
  CorruptionSpec s;
  s.p_sub = kv.get_double("p_sub", s.p_sub);
  s.p_del = kv.get_double("p_del", s.p_del);
  s.p_ins = kv.get_double("p_ins", s.p_ins);
  s.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(s.seed)));
  s.validate();
  return s;
}

KvFile CorruptionSpec::to_kv() const {
  KvFile kv;
  kv.set_double("p_sub", p_sub);
  kv.set_double("p_del", p_del);
  kv.set_double("p_ins", p_ins);
  kv.set_int("seed", static_cast<int64_t>(seed));
  return kv;
}

std::vector<double> token_prototypes(const CorpusSpec& spec) {
  Rng rng(derive_seed(spec.seed, kProtoStream));
  std::vector<double> protos(static_cast<size_t>(spec.vocab_size) * spec.frame_dim);
  for (double& v : protos) v = rng.normal(0.0, 1.0);
  return protos;
}

std::vector<double> emotion_offsets(const CorpusSpec& spec) {
  Rng rng(derive_seed(spec.seed, kOffsetStream));
  std::vector<double> offs(static_cast<size_t>(spec.n_emotions) * spec.frame_dim);
  for (double& v : offs) v = rng.normal(0.0, spec.emotion_gain);
  return offs;
}

std::vector<UtteranceExample> gen_corpus(const CorpusSpec& spec, int64_t n) {
  spec.validate();
  if (n <= 0) throw std::runtime_error("gen_corpus: n_utterances must be > 0");
  const std::vector<double> protos = token_prototypes(spec);
  const std::vector<double> offs = emotion_offsets(spec);
  const int bg_begin = spec.background_begin();
  const int bg_count = spec.vocab_size - bg_begin;

  std::vector<UtteranceExample> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t id = 0; id < n; ++id) {
    Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(id)));
    UtteranceExample ex;
    ex.id = id;
    ex.emotion = static_cast<int>(rng.below(static_cast<uint64_t>(spec.n_emotions)));
    const int len =
        spec.len_min +
        static_cast<int>(rng.below(static_cast<uint64_t>(spec.len_max - spec.len_min + 1)));
    ex.transcript.reserve(static_cast<size_t>(len));
    const int kw_begin = spec.keyword_begin(ex.emotion);
    for (int p = 0; p < len; ++p) {
      int tok;
      if (rng.uniform() < spec.alpha) {
        tok = kw_begin + static_cast<int>(
                             rng.below(static_cast<uint64_t>(spec.keywords_per_emotion)));
      } else {
        tok = bg_begin + static_cast<int>(rng.below(static_cast<uint64_t>(bg_count)));
      }
      ex.transcript.push_back(tok);
    }
    ex.frame_dim = spec.frame_dim;
    ex.m = len * spec.frames_per_token;
    ex.frames.resize(static_cast<size_t>(ex.m) * spec.frame_dim);
    size_t w = 0;
    for (int p = 0; p < len; ++p) {
      const double* proto =
          &protos[static_cast<size_t>(ex.transcript[static_cast<size_t>(p)]) *
                  spec.frame_dim];
      const double* off = &offs[static_cast<size_t>(ex.emotion) * spec.frame_dim];
      for (int r = 0; r < spec.frames_per_token; ++r)
        for (int f = 0; f < spec.frame_dim; ++f)
          ex.frames[w++] = proto[f] + off[f] + rng.normal(0.0, spec.noise_sigma);
    }
    ex.asr = ex.transcript;
    out.push_back(std::move(ex));
  }
  return out;
}

TokenSequence corrupt(const TokenSequence& transcript, const CorruptionSpec& spec,
                      int vocab_size, int64_t utterance_id) {
  spec.validate();
  if (transcript.empty()) throw std::runtime_error("corrupt: empty transcript");
  const int content_begin = Vocab::kNumReserved;
  const int content_count = vocab_size - content_begin;
  if (content_count < 2)
    throw std::runtime_error("corrupt: vocab too small for substitutions");
  Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(utterance_id)));

  // Uniform over content ids excluding `avoid` (pass < 0 to allow all).
  auto draw_token = [&](int avoid) {
    if (avoid < 0)
      return content_begin + static_cast<int>(rng.below(static_cast<uint64_t>(content_count)));
    int t = content_begin +
            static_cast<int>(rng.below(static_cast<uint64_t>(content_count - 1)));
    if (t >= avoid) ++t;
    return t;
  };

  TokenSequence out;
  out.reserve(transcript.size());
  for (int tok : transcript) {
    const double u = rng.uniform();
    if (u < spec.p_sub) {
      out.push_back(draw_token(tok));
    } else if (u < spec.p_sub + spec.p_del) {
      // deleted
    } else {
      out.push_back(tok);
    }
    if (rng.bernoulli(spec.p_ins)) out.push_back(draw_token(-1));
  }
  return out;
}

void corrupt_corpus(std::vector<UtteranceExample>& examples,
                    const CorruptionSpec& spec, int vocab_size) {
  for (auto& ex : examples) ex.asr = corrupt(ex.transcript, spec, vocab_size, ex.id);
}

namespace {

constexpr const char* kCorpusMagic = "mfaec-corpus";
constexpr int kCorpusVersion = 1;

[[noreturn]] void fail_line(const std::string& path, int lineno,
                            const std::string& field) {
  throw std::runtime_error(path + ":" + std::to_string(lineno) +
                           ": malformed corpus record (" + field + ")");
}

}  // namespace

void write_corpus(const std::vector<UtteranceExample>& examples,
                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_corpus: cannot open " + path);
  out << kCorpusMagic << " " << kCorpusVersion
      << " id emotion frame_dim m transcript asr frames\n";
  char buf[40];
  for (const auto& ex : examples) {
    if (ex.frames.size() != static_cast<size_t>(ex.m) * ex.frame_dim)
      throw std::runtime_error("write_corpus: utterance " + std::to_string(ex.id) +
                               " frame buffer does not match m x frame_dim");
    out << ex.id << " " << ex.emotion << " " << ex.frame_dim << " " << ex.m;
    out << " " << ex.transcript.size();
    for (int t : ex.transcript) out << " " << t;
    out << " " << ex.asr.size();
    for (int t : ex.asr) out << " " << t;
    for (double v : ex.frames) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << " " << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write_corpus: write failed for " + path);
}

std::vector<UtteranceExample> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_corpus: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(path + ":1: missing corpus header");
  {
    std::istringstream hs(line);
    std::string magic;
    int version = 0;
    if (!(hs >> magic >> version) || magic != kCorpusMagic)
      throw std::runtime_error(path + ":1: bad corpus header '" + line + "'");
    if (version != kCorpusVersion)
      throw std::runtime_error(path + ":1: unsupported corpus version " +
                               std::to_string(version));
  }
  std::vector<UtteranceExample> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    UtteranceExample ex;
    if (!(ls >> ex.id)) fail_line(path, lineno, "id");
    if (!(ls >> ex.emotion) || ex.emotion < 0) fail_line(path, lineno, "emotion");
    if (!(ls >> ex.frame_dim) || ex.frame_dim < 1) fail_line(path, lineno, "frame_dim");
    if (!(ls >> ex.m) || ex.m < 0) fail_line(path, lineno, "m");
    size_t n_tr = 0;
    if (!(ls >> n_tr)) fail_line(path, lineno, "transcript length");
    ex.transcript.resize(n_tr);
    for (size_t i = 0; i < n_tr; ++i)
      if (!(ls >> ex.transcript[i])) fail_line(path, lineno, "transcript token");
    size_t n_asr = 0;
    if (!(ls >> n_asr)) fail_line(path, lineno, "asr length");
    ex.asr.resize(n_asr);
    for (size_t i = 0; i < n_asr; ++i)
      if (!(ls >> ex.asr[i])) fail_line(path, lineno, "asr token");
    const size_t n_vals = static_cast<size_t>(ex.m) * ex.frame_dim;
    ex.frames.resize(n_vals);
    for (size_t i = 0; i < n_vals; ++i)
      if (!(ls >> ex.frames[i])) fail_line(path, lineno, "frame value");
    double extra;
    if (ls >> extra) fail_line(path, lineno, "trailing values");
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace mfaec
