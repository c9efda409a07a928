#include "mfaec/align.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace mfaec {

Vocab::Vocab() {
  tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (int i = 0; i < kNumReserved; ++i) ids_[tokens_[i]] = i;
}

int Vocab::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_[token] = id;
  return id;
}

int Vocab::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || id >= static_cast<int>(tokens_.size()))
    throw std::runtime_error("vocab: id " + std::to_string(id) +
                             " out of range (size " +
                             std::to_string(tokens_.size()) + ")");
  return tokens_[static_cast<size_t>(id)];
}

const char* edit_label_name(EditLabel label) {
  switch (label) {
    case EditLabel::kKeep: return "K";
    case EditLabel::kDelete: return "D";
    case EditLabel::kChange: return "C";
  }
  throw std::runtime_error("edit_label_name: bad label");
}

std::vector<std::pair<int, int>> lcs_align(const TokenSequence& hyp,
                                           const TokenSequence& ref) {
  const int n = static_cast<int>(hyp.size());
  const int m = static_cast<int>(ref.size());
  // lcs[i][j] = LCS length of hyp[i:], ref[j:].
  std::vector<std::vector<int>> lcs(n + 1, std::vector<int>(m + 1, 0));
  for (int i = n - 1; i >= 0; --i) {
    for (int j = m - 1; j >= 0; --j) {
      if (hyp[i] == ref[j])
        lcs[i][j] = lcs[i + 1][j + 1] + 1;
      else
        lcs[i][j] = std::max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  std::vector<std::pair<int, int>> matches;
  matches.reserve(static_cast<size_t>(lcs[0][0]));
  int i = 0, j = 0;
  while (i < n && j < m) {
    if (hyp[i] == ref[j] && lcs[i][j] == lcs[i + 1][j + 1] + 1) {
      matches.emplace_back(i, j);  // earliest optimal match: leftmost
      ++i;
      ++j;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      ++i;
    } else {
      ++j;
    }
  }
  return matches;
}

AlignmentLabeling label_edits(const TokenSequence& hyp,
                              const TokenSequence& ref) {
  AlignmentLabeling out;
  if (hyp.empty()) {
    out.alignable = ref.empty();
    return out;
  }

  const auto matches = lcs_align(hyp, ref);
  out.labels.assign(hyp.size(), EditLabel::kDelete);

  // Promote position `pos` (currently K, or already C from an earlier pure
  // insertion) so its target splices `inserted` before/after its own value.
  auto splice = [&](int pos, const TokenSequence& inserted, bool before) {
    TokenSequence& target = out.targets[pos];
    if (out.labels[static_cast<size_t>(pos)] == EditLabel::kKeep) {
      target = {hyp[static_cast<size_t>(pos)]};
      out.labels[static_cast<size_t>(pos)] = EditLabel::kChange;
    }
    target.insert(before ? target.begin() : target.end(), inserted.begin(),
                  inserted.end());
  };

  int prev_h = 0, prev_r = 0;
  const int num_anchors = static_cast<int>(matches.size());
  for (int a = 0; a <= num_anchors; ++a) {
    const bool sentinel = a == num_anchors;
    const int hi = sentinel ? static_cast<int>(hyp.size()) : matches[a].first;
    const int ri = sentinel ? static_cast<int>(ref.size()) : matches[a].second;
    const bool hyp_gap = hi > prev_h;
    const bool ref_gap = ri > prev_r;
    if (!sentinel) out.labels[static_cast<size_t>(hi)] = EditLabel::kKeep;
    if (ref_gap) {
      TokenSequence gap(ref.begin() + prev_r, ref.begin() + ri);
      if (hyp_gap) {
        out.labels[static_cast<size_t>(prev_h)] = EditLabel::kChange;
        out.targets[prev_h] = std::move(gap);
      } else if (!sentinel) {
        splice(hi, gap, /*before=*/true);  // promote the following match
      } else {
        // Trailing insertion: splice after the last labeled K or C.
        int pos = static_cast<int>(hyp.size()) - 1;
        while (pos >= 0 && out.labels[static_cast<size_t>(pos)] ==
                               EditLabel::kDelete)
          --pos;
        if (pos < 0)
          throw std::runtime_error("label_edits: no anchor for insertion");
        splice(pos, gap, /*before=*/false);
      }
    }
    // Hypothesis-gap tokens not made C above stay D (the default).
    prev_h = sentinel ? hi : hi + 1;
    prev_r = sentinel ? ri : ri + 1;
  }
  return out;
}

TokenSequence apply_labeling(const TokenSequence& hyp,
                             const AlignmentLabeling& labeling) {
  if (!labeling.alignable)
    throw std::runtime_error("apply_labeling: unalignable labeling");
  if (labeling.labels.size() != hyp.size())
    throw std::runtime_error(
        "apply_labeling: " + std::to_string(labeling.labels.size()) +
        " labels for " + std::to_string(hyp.size()) + " tokens");
  TokenSequence out;
  out.reserve(hyp.size());
  for (size_t i = 0; i < hyp.size(); ++i) {
    switch (labeling.labels[i]) {
      case EditLabel::kKeep:
        out.push_back(hyp[i]);
        break;
      case EditLabel::kDelete:
        break;
      case EditLabel::kChange: {
        auto it = labeling.targets.find(static_cast<int>(i));
        if (it == labeling.targets.end() || it->second.empty())
          throw std::runtime_error("apply_labeling: C at position " +
                                   std::to_string(i) + " has no target");
        out.insert(out.end(), it->second.begin(), it->second.end());
        break;
      }
    }
  }
  return out;
}

int64_t edit_distance(const TokenSequence& a, const TokenSequence& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double wer(const TokenSequence& hyp, const TokenSequence& ref) {
  if (ref.empty()) throw std::runtime_error("wer: empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) /
         static_cast<double>(ref.size());
}

}  // namespace mfaec
