#include "phi/util.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace phi {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> a = {
      {"beta", "phi.beta"}, {"gamma", "phi.gamma"}, {"k", "phi.k"}};
  return a;
}

std::string canonical(const std::string& key) {
  auto it = aliases().find(key);
  return it == aliases().end() ? key : it->second;
}

}  // namespace

const std::map<std::string, std::string>& Config::defaults() {
  static const std::map<std::string, std::string> d = {
      {"threads", "1"},
      {"seed", "0"},
      {"data.path", "dataset.xyz"},
      {"data.n_molecules", "2000"},
      {"data.atoms_min", "8"},
      {"data.atoms_max", "16"},
      {"data.box", "6.0"},
      {"data.charge_scheme", "neutral-pairs"},
      {"host.feature_width", "64"},
      {"host.n_layers", "3"},
      {"host.n_rbf", "32"},
      {"host.cutoff", "6.0"},
      {"host.max_neighbors", "50"},
      {"host.z_max", "54"},
      {"phi.k", "8"},
      {"phi.beta", "0.01"},
      {"phi.gamma", "0.0001"},
      {"phi.kernel_size", "1"},
      {"phi.hidden_channels", "0"},
      {"train.with_phi", "true"},
      {"train.epochs", "200"},
      {"train.batch_size", "32"},
      {"train.lr", "0.001"},
      {"train.grad_clip", "1000"},
      {"train.data_fraction", "1.0"},
      {"train.ablation", "none"},
      {"train.zero_alpha_init", "false"},
      {"eval.checkpoint", "model.ckpt"},
      {"eval.split", "test"},
      {"md.checkpoint", "model.ckpt"},
      {"md.molecule", "0"},
      {"md.relax", "false"},
      {"md.steps", "20000"},
      {"md.dt", "0.5"},
      {"md.temperature", "300"},
      {"md.frame_stride", "100"},
      {"md.mode", "autodiff"},
      {"bench.n", "1000"},
      {"bench.k", "8"},
      {"bench.reps", "3"},
      {"bench.budget", "0"},
      {"bench.parallel_blocks", "1"},
      {"hyper.budget", "20"},
  };
  return d;
}

std::string Config::valid_keys_message() {
  std::string msg = "valid keys:";
  for (const auto& [key, value] : defaults()) msg += " " + key;
  for (const auto& [alias, target] : aliases()) msg += " " + alias;
  return msg;
}

void Config::set(const std::string& key, const std::string& value) {
  const std::string ck = canonical(trim(key));
  if (!defaults().count(ck))
    throw ConfigError("unknown config key '" + trim(key) + "'; " + valid_keys_message());
  values_[ck] = trim(value);
}

void Config::load_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected `key = value`, got '" +
                        stripped + "'");
    set(stripped.substr(0, eq), stripped.substr(eq + 1));
  }
}

void Config::load_file(const std::string& path) { load_text(read_text_file(path)); }

void Config::apply_override(const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + kv + "': expected key=value");
  set(kv.substr(0, eq), kv.substr(eq + 1));
}

bool Config::is_set(const std::string& key) const { return values_.count(canonical(key)) > 0; }

std::string Config::get(const std::string& key) const {
  const std::string ck = canonical(key);
  auto it = values_.find(ck);
  if (it != values_.end()) return it->second;
  auto dt = defaults().find(ck);
  if (dt == defaults().end())
    throw ConfigError("unknown config key '" + key + "'; " + valid_keys_message());
  return dt->second;
}

int Config::get_int(const std::string& key) const {
  const std::string v = get(key);
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

uint64_t Config::get_u64(const std::string& key) const {
  const std::string v = get(key);
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

double Config::get_double(const std::string& key) const {
  const std::string v = get(key);
  try {
    size_t idx = 0;
    const double out = std::stod(v, &idx);
    if (idx != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool Config::get_bool(const std::string& key) const {
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> Config::get_int_list(const std::string& key) const {
  const std::string v = get(key);
  std::vector<int> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    const std::string t = trim(item);
    int value = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty())
      throw ConfigError("config key '" + key + "': expected comma-separated integers, got '" + v +
                        "'");
    out.push_back(value);
  }
  if (out.empty())
    throw ConfigError("config key '" + key + "': expected comma-separated integers, got '" + v +
                      "'");
  return out;
}

std::string Config::echo() const {
  std::string out;
  for (const auto& [key, def] : defaults()) {
    auto it = values_.find(key);
    out += key + " = " + (it == values_.end() ? def : it->second) + "\n";
  }
  return out;
}

std::string format_double(double v) {
  // Shortest decimal that parses back to the same double. strtod rather than
  // stod: stod throws out_of_range on subnormal round trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v || v != v) return buf;
  }
  return "0";
}

std::string to_csv(const Table& t) {
  std::string out;
  for (size_t c = 0; c < t.columns.size(); ++c)
    out += (c ? "," : "") + t.columns[c];
  out += "\n";
  for (const auto& row : t.rows) {
    if (row.size() != t.columns.size())
      throw ConfigError("csv: row width does not match the header");
    for (size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + row[c];
    out += "\n";
  }
  return out;
}

Table parse_csv(const std::string& text) {
  Table t;
  std::istringstream is(text);
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    if (header) {
      t.columns = cells;
      header = false;
    } else {
      if (cells.size() != t.columns.size())
        throw ConfigError("csv: ragged row '" + line + "'");
      t.rows.push_back(cells);
    }
  }
  if (header) throw ConfigError("csv: missing header row");
  return t;
}

std::string to_text(const Table& t) {
  std::vector<size_t> width(t.columns.size());
  for (size_t c = 0; c < t.columns.size(); ++c) width[c] = t.columns[c].size();
  for (const auto& row : t.rows) {
    if (row.size() != t.columns.size())
      throw ConfigError("table: row width does not match the header");
    for (size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  auto emit_row = [&](const std::vector<std::string>& cells) {
    for (size_t c = 0; c < cells.size(); ++c) {
      out += cells[c];
      if (c + 1 < cells.size()) out += std::string(width[c] - cells[c].size() + 2, ' ');
    }
    out += "\n";
  };
  emit_row(t.columns);
  size_t total = 0;
  for (size_t c = 0; c < width.size(); ++c) total += width[c] + (c + 1 < width.size() ? 2 : 0);
  out += std::string(total, '-') + "\n";
  for (const auto& row : t.rows) emit_row(row);
  return out;
}

std::string emit_report(const Table& t, ReportFormat format) {
  return format == ReportFormat::Csv ? to_csv(t) : to_text(t);
}

Table checks_table(const std::vector<VerifyCheck>& checks) {
  Table t;
  t.columns = {"check", "deviation", "tolerance", "pass"};
  for (const VerifyCheck& c : checks)
    t.rows.push_back(
        {c.name, format_double(c.deviation), format_double(c.tolerance), c.pass ? "pass" : "fail"});
  return t;
}

int count_passes(const Table& t) {
  const auto it = std::find(t.columns.begin(), t.columns.end(), "pass");
  if (it == t.columns.end()) throw ConfigError("table has no `pass` column");
  const size_t c = size_t(it - t.columns.begin());
  int n = 0;
  for (const auto& row : t.rows) n += (row[c] == "pass");
  return n;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr))
    throw std::runtime_error("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out(size_t(len) * 2, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = hex[md[i] >> 4];
    out[2 * i + 1] = hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_text_file(path)); }

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write file '" + path + "'");
  f << content;
  if (!f.good()) throw ConfigError("short write to '" + path + "'");
}

std::string make_manifest(const std::string& dir, std::vector<std::string> rel_paths) {
  std::sort(rel_paths.begin(), rel_paths.end());
  std::string out;
  for (const std::string& rel : rel_paths)
    out += sha256_file(dir + "/" + rel) + " " + rel + "\n";
  return out;
}

}  // namespace phi
