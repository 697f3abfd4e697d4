#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "phi/oracles.hpp"

namespace phi {

struct ConfigError : std::invalid_argument {
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Line-oriented `key = value` configuration with dotted section prefixes
// (phi.k, train.lr, ...). Every key has a registered default; unknown keys
// are rejected with the full list of valid keys. `beta`, `gamma`, and `k`
// are accepted as aliases for phi.beta / phi.gamma / phi.k.
class Config {
 public:
  static const std::map<std::string, std::string>& defaults();
  static std::string valid_keys_message();

  // Throws ConfigError on unknown key (after alias canonicalization).
  void set(const std::string& key, const std::string& value);
  void load_text(const std::string& text);        // parse `key = value` lines
  void load_file(const std::string& path);        // ConfigError on unreadable
  void apply_override(const std::string& kv);     // "key=value"

  bool is_set(const std::string& key) const;      // explicitly set (not default)
  std::string get(const std::string& key) const;  // effective value
  int get_int(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;  // comma-separated

  // All keys with effective values, sorted, one `key = value` per line.
  std::string echo() const;

 private:
  std::map<std::string, std::string> values_;
};

// Small in-memory table backing both report formats (single source of truth).
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;  // each row matches columns
};

enum class ReportFormat { Csv, Text };

std::string format_double(double v);  // shortest round-trippable decimal
std::string to_csv(const Table& t);
Table parse_csv(const std::string& text);  // ConfigError on ragged rows
std::string to_text(const Table& t);       // aligned, human-readable
std::string emit_report(const Table& t, ReportFormat format);

Table checks_table(const std::vector<VerifyCheck>& checks);
int count_passes(const Table& t);  // rows whose `pass` cell == "pass"

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

std::string read_text_file(const std::string& path);   // ConfigError on failure
void write_text_file(const std::string& path, const std::string& content);

// One line per artifact: `<sha256> <relative-path>`, sorted by path.
std::string make_manifest(const std::string& dir, std::vector<std::string> rel_paths);

}  // namespace phi
