#include "mfaec/kvfile.hpp"

#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mfaec {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

KvFile KvFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("kvfile: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

KvFile KvFile::parse(const std::string& text, const std::string& origin) {
  KvFile kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": empty key");
    kv.set(key, value);
  }
  return kv;
}

void KvFile::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("kvfile: cannot write " + path);
  out << to_string();
  if (!out) throw std::runtime_error("kvfile: write failed for " + path);
}

std::string KvFile::to_string() const {
  std::ostringstream out;
  for (const auto& key : order_) out << key << " = " << values_.at(key) << "\n";
  return out.str();
}

bool KvFile::has(const std::string& key) const { return values_.count(key) > 0; }

std::string KvFile::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw std::runtime_error(origin_ + ": missing key '" + key + "'");
  return it->second;
}

int64_t KvFile::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  size_t pos = 0;
  int64_t out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty())
    throw std::runtime_error(origin_ + ": key '" + key + "' = '" + v +
                             "' is not an integer");
  return out;
}

double KvFile::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty())
    throw std::runtime_error(origin_ + ": key '" + key + "' = '" + v +
                             "' is not a number");
  return out;
}

bool KvFile::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error(origin_ + ": key '" + key + "' = '" + v +
                           "' is not a boolean");
}

std::string KvFile::get_string(const std::string& key,
                               const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}
int64_t KvFile::get_int(const std::string& key, int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}
double KvFile::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}
bool KvFile::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

void KvFile::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) order_.push_back(key);
  values_[key] = value;
}

void KvFile::set_int(const std::string& key, int64_t value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%" PRId64, value);
  set(key, buf);
}

void KvFile::set_double(const std::string& key, double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  set(key, buf);
}

}  // namespace mfaec
