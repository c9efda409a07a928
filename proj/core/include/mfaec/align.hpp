#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "mfaec/vocab.hpp"

namespace mfaec {

// Per-token edit labels on a hypothesis relative to a reference. The integer
// values double as class indices for the detector head.
enum class EditLabel : int { kKeep = 0, kDelete = 1, kChange = 2 };

const char* edit_label_name(EditLabel label);  // "K", "D", "C"

struct AlignmentLabeling {
  // False only for the degenerate pair (empty hypothesis, nonempty
  // reference): there is no token to carry an edit.
  bool alignable = true;
  std::vector<EditLabel> labels;  // one per hypothesis token
  // Correction target per kChange position; always nonempty.
  std::map<int, TokenSequence> targets;
};

// Longest common subsequence as matched (hyp_index, ref_index) pairs, both
// strictly increasing. Ties in the DP are broken toward the leftmost
// alignment (matches taken at the smallest indices).
std::vector<std::pair<int, int>> lcs_align(const TokenSequence& hyp,
                                           const TokenSequence& ref);

// Labels every hypothesis token K/D/C so that apply_labeling reproduces the
// reference exactly. LCS matches anchor as K; a gap with reference tokens
// turns the first gapped hypothesis token into C carrying the whole
// reference gap (the rest become D); a gap with no reference tokens is all
// D; a pure insertion promotes the nearest following K (else the nearest
// preceding K) to a C whose target splices the inserted tokens around the
// promoted token's own value.
AlignmentLabeling label_edits(const TokenSequence& hyp,
                              const TokenSequence& ref);

// Replays a labeling: K keeps the token, D drops it, C substitutes its
// target. Errors if the labeling is unalignable or its length does not
// match the hypothesis.
TokenSequence apply_labeling(const TokenSequence& hyp,
                             const AlignmentLabeling& labeling);

// Word-level Levenshtein distance (unit costs).
int64_t edit_distance(const TokenSequence& a, const TokenSequence& b);

// edit_distance(hyp, ref) / |ref|. Errors on an empty reference.
double wer(const TokenSequence& hyp, const TokenSequence& ref);

}  // namespace mfaec
