#include "mfaec/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace mfaec {

namespace {

void put_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u8(std::ostream& out, uint8_t v) { put_bytes(out, &v, 1); }

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, b, 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, b, 8);
}

void put_i64(std::ostream& out, int64_t v) { put_u64(out, static_cast<uint64_t>(v)); }

void put_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  put_bytes(out, s.data(), s.size());
}

struct Reader {
  std::istream& in;
  const std::string& path;

  void bytes(void* p, size_t n, const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n)
      throw std::runtime_error(path + ": truncated checkpoint (reading " + what + ")");
  }
  uint8_t u8(const char* what) {
    uint8_t v;
    bytes(&v, 1, what);
    return v;
  }
  uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(b, 4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }
  uint64_t u64(const char* what) {
    unsigned char b[8];
    bytes(b, 8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }
  int64_t i64(const char* what) { return static_cast<int64_t>(u64(what)); }
  double f64(const char* what) {
    const uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(const char* what) {
    const uint32_t n = u32(what);
    if (n > (1u << 20))
      throw std::runtime_error(path + ": implausible string length in checkpoint");
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
};

void put_config(std::ostream& out, const ModelConfig& c) {
  put_i64(out, c.vocab_size);
  put_i64(out, c.n_emotions);
  put_i64(out, c.frame_dim);
  put_i64(out, c.downsample);
  put_i64(out, c.d);
  put_i64(out, c.heads);
  put_i64(out, c.enc_layers_speech);
  put_i64(out, c.enc_layers_text);
  put_i64(out, c.dec_max_len);
  put_i64(out, c.max_pos);
  put_f64(out, c.dropout);
  put_f64(out, c.ln_eps);
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  c.vocab_size = static_cast<int>(r.i64("config.vocab_size"));
  c.n_emotions = static_cast<int>(r.i64("config.n_emotions"));
  c.frame_dim = static_cast<int>(r.i64("config.frame_dim"));
  c.downsample = static_cast<int>(r.i64("config.downsample"));
  c.d = static_cast<int>(r.i64("config.d"));
  c.heads = static_cast<int>(r.i64("config.heads"));
  c.enc_layers_speech = static_cast<int>(r.i64("config.enc_layers_speech"));
  c.enc_layers_text = static_cast<int>(r.i64("config.enc_layers_text"));
  c.dec_max_len = static_cast<int>(r.i64("config.dec_max_len"));
  c.max_pos = static_cast<int>(r.i64("config.max_pos"));
  c.dropout = r.f64("config.dropout");
  c.ln_eps = r.f64("config.ln_eps");
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  put_bytes(out, kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(ckpt.params.mode));
  put_u8(out, ckpt.aux_stripped ? 1 : 0);
  put_config(out, ckpt.params.config);
  put_i64(out, ckpt.step);
  put_u64(out, ckpt.rng_state);
  put_u64(out, ckpt.params.set.size());
  for (size_t i = 0; i < ckpt.params.set.size(); ++i) {
    const Param& p = ckpt.params.set[i];
    put_string(out, p.name);
    put_u32(out, static_cast<uint32_t>(p.shape.size()));
    for (int d : p.shape) put_i64(out, d);
    for (double v : *p.values) put_f64(out, v);
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  Reader r{in, path};

  char magic[sizeof kCheckpointMagic];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error(path + ": not a checkpoint (bad magic)");
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw std::runtime_error(path + ": checkpoint version " + std::to_string(version) +
                             " not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  const uint32_t mode_raw = r.u32("mode");
  if (mode_raw > static_cast<uint32_t>(AblationMode::kNoMf))
    throw std::runtime_error(path + ": invalid ablation mode " + std::to_string(mode_raw));
  const uint8_t stripped = r.u8("aux_stripped");
  if (stripped > 1)
    throw std::runtime_error(path + ": invalid aux_stripped flag");

  Checkpoint ckpt;
  ckpt.params.mode = static_cast<AblationMode>(mode_raw);
  ckpt.params.config = read_config(r);
  ckpt.aux_stripped = stripped == 1;
  ckpt.step = r.i64("step");
  ckpt.rng_state = r.u64("rng_state");

  // Expected tensor roster for this (config, mode, stripped) combination.
  std::map<std::string, std::vector<int>> expected;
  for (auto& [name, shape] : param_shapes(ckpt.params.config, ckpt.params.mode))
    if (!(ckpt.aux_stripped && is_aux_param(name))) expected.emplace(name, shape);

  const uint64_t n_tensors = r.u64("tensor count");
  if (n_tensors != expected.size())
    throw std::runtime_error(path + ": " + std::to_string(n_tensors) +
                             " tensors, expected " + std::to_string(expected.size()) +
                             " for mode " +
                             ablation_mode_name(ckpt.params.mode) +
                             (ckpt.aux_stripped ? " (aux-stripped)" : ""));
  std::set<std::string> seen;
  for (uint64_t t = 0; t < n_tensors; ++t) {
    const std::string name = r.str("tensor name");
    auto it = expected.find(name);
    if (it == expected.end())
      throw std::runtime_error(path + ": unknown tensor name '" + name + "'");
    if (!seen.insert(name).second)
      throw std::runtime_error(path + ": duplicate tensor '" + name + "'");
    const uint32_t ndim = r.u32("tensor rank");
    if (ndim != it->second.size())
      throw std::runtime_error(path + ": tensor '" + name + "' has rank " +
                               std::to_string(ndim) + ", expected " +
                               std::to_string(it->second.size()));
    std::vector<int> shape(ndim);
    int64_t numel = 1;
    for (uint32_t k = 0; k < ndim; ++k) {
      shape[k] = static_cast<int>(r.i64("tensor dim"));
      if (shape[k] != it->second[k])
        throw std::runtime_error(path + ": tensor '" + name + "' has shape " +
                                 shape_str(shape) + " at axis " + std::to_string(k) +
                                 ", expected " + shape_str(it->second));
      numel *= shape[k];
    }
    Param& p = ckpt.params.set.add(name, shape);
    std::vector<double>& v = *p.values;
    for (int64_t k = 0; k < numel; ++k) v[static_cast<size_t>(k)] = r.f64("tensor data");
  }
  if (seen.size() != expected.size()) {
    for (const auto& [name, shape] : expected)
      if (!seen.count(name))
        throw std::runtime_error(path + ": missing tensor '" + name + "'");
  }
  return ckpt;
}

Checkpoint strip_aux(const Checkpoint& ckpt) {
  Checkpoint out;
  out.params.config = ckpt.params.config;
  out.params.mode = ckpt.params.mode;
  out.aux_stripped = true;
  out.step = ckpt.step;
  out.rng_state = ckpt.rng_state;
  for (size_t i = 0; i < ckpt.params.set.size(); ++i) {
    const Param& p = ckpt.params.set[i];
    if (is_aux_param(p.name)) continue;
    Param& q = out.params.set.add(p.name, p.shape);
    *q.values = *p.values;
  }
  return out;
}

}  // namespace mfaec
