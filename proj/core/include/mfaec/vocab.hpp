#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace mfaec {

using TokenSequence = std::vector<int>;

// Bidirectional token-string <-> id map with fixed reserved ids. Content
// tokens start at kNumReserved; generators never emit reserved ids as content.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumReserved = 4;

  Vocab();

  // Returns the existing id or assigns the next free one.
  int add(const std::string& token);
  // kUnk for unknown tokens.
  int id_of(const std::string& token) const;
  const std::string& token_of(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  static bool is_reserved(int id) { return id >= 0 && id < kNumReserved; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace mfaec
