#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mfaec {

// Flat key=value text documents: one pair per line, '#' starts a comment,
// blank lines ignored, whitespace around keys/values trimmed. Keys are kept
// in insertion order for deterministic writes.
class KvFile {
 public:
  KvFile() = default;

  static KvFile load(const std::string& path);
  static KvFile parse(const std::string& text, const std::string& origin);
  void save(const std::string& path) const;
  std::string to_string() const;

  bool has(const std::string& key) const;
  const std::vector<std::string>& keys() const { return order_; }

  // Required lookups: error names the missing key and the file.
  std::string get_string(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;  // true/false/1/0

  // Defaulted lookups.
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value);
  void set_int(const std::string& key, int64_t value);
  void set_double(const std::string& key, double value);

 private:
  std::string origin_ = "<memory>";
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace mfaec
