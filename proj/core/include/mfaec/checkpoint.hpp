#pragma once

#include <cstdint>
#include <string>

#include "mfaec/model.hpp"

namespace mfaec {

// Trained model snapshot. The binary layout is little-endian throughout:
// magic "MFAEC", format version, ablation mode, aux-stripped flag, the
// model config, training step, RNG state, then the named tensors in
// registration order (name, dims, 8-byte reals).
struct Checkpoint {
  ModelParams params;  // carries config, mode, and the tensors
  bool aux_stripped = false;
  int64_t step = 0;
  uint64_t rng_state = 0;
};

inline constexpr char kCheckpointMagic[5] = {'M', 'F', 'A', 'E', 'C'};
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// Validates magic and version before anything else, then the config, then
// that the tensor names and shapes are exactly those the (config, mode,
// stripped) combination expects.
Checkpoint load_checkpoint(const std::string& path);

// Deep-copies the checkpoint without the "aed."/"aec." tensors. Evaluation
// behaves identically on the result; training cannot resume from it.
Checkpoint strip_aux(const Checkpoint& ckpt);

}  // namespace mfaec
