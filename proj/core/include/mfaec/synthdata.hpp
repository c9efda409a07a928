#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfaec/kvfile.hpp"
#include "mfaec/vocab.hpp"

namespace mfaec {

// Parameters of the synthetic emotion-labeled corpus. Token-prototype frame
// vectors and per-emotion offsets are not stored explicitly: they are drawn
// deterministically from `seed` (see token_prototypes / emotion_offsets), so
// the whole corpus is a pure function of this struct.
struct CorpusSpec {
  int vocab_size = 64;          // includes the 4 reserved ids
  int n_emotions = 4;           // e
  int keywords_per_emotion = 6; // contiguous id block per emotion
  double alpha = 0.9;           // keyword mass; 1-alpha goes to background
  int len_min = 6;              // transcript length range, inclusive
  int len_max = 12;
  int frame_dim = 16;
  int frames_per_token = 4;
  double noise_sigma = 0.1;     // per-frame Gaussian noise
  double emotion_gain = 0.75;   // scale of the per-emotion frame offset
  uint64_t seed = 7;

  void validate() const;
  int keyword_begin(int emotion) const;  // first keyword id of the emotion
  int background_begin() const;          // first shared background id

  static CorpusSpec from_kv(const KvFile& kv);
  KvFile to_kv() const;
};

// ASR corruption channel: per token substitute/delete/keep, then insert a
// random content token after each position. Seeds derive per utterance.
struct CorruptionSpec {
  double p_sub = 0.1;
  double p_del = 0.05;
  double p_ins = 0.05;
  uint64_t seed = 7;

  void validate() const;

  static CorruptionSpec from_kv(const KvFile& kv);
  KvFile to_kv() const;
};

struct UtteranceExample {
  int64_t id = 0;
  int emotion = 0;                // L in {0..e-1}
  int frame_dim = 0;
  int m = 0;                      // number of frames
  std::vector<double> frames;     // m x frame_dim, row-major
  TokenSequence transcript;       // C (gold)
  TokenSequence asr;              // T (hypothesis)
};

// Deterministic derived tables: vocab_size x frame_dim prototypes and
// n_emotions x frame_dim additive offsets, both row-major.
std::vector<double> token_prototypes(const CorpusSpec& spec);
std::vector<double> emotion_offsets(const CorpusSpec& spec);

// Generates utterances with ids 0..n-1; frames and transcript filled, `asr`
// left equal to the transcript until a corruption pass runs.
std::vector<UtteranceExample> gen_corpus(const CorpusSpec& spec, int64_t n);

TokenSequence corrupt(const TokenSequence& transcript, const CorruptionSpec& spec,
                      int vocab_size, int64_t utterance_id);

// Applies `corrupt` to every example's transcript, writing `asr`.
void corrupt_corpus(std::vector<UtteranceExample>& examples,
                    const CorruptionSpec& spec, int vocab_size);

void write_corpus(const std::vector<UtteranceExample>& examples,
                  const std::string& path);
std::vector<UtteranceExample> read_corpus(const std::string& path);

}  // namespace mfaec
