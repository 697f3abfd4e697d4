#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace phi {

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// One molecule / frame: atoms with positions in Å, optional reference labels.
struct AtomicSystem {
  std::vector<int> atomic_numbers;                // n entries, each >= 1
  std::vector<double> positions;                  // n*3 row-major, Å
  std::optional<double> energy;                   // model units
  std::optional<std::vector<double>> forces;      // n*3
  std::optional<std::vector<double>> charge_labels;  // n, synthetic data only

  int n_atoms() const { return int(atomic_numbers.size()); }
  // n >= 1, label lengths consistent, no two atoms within 1e-6 Å.
  void validate() const;
};

int element_to_z(const std::string& symbol);  // ParseError on unknown symbol
const std::string& z_to_element(int z);       // ParseError out of table range

// Plain or extended XYZ. Frame = count line, comment line (may carry
// `energy=<float>`), then per-atom rows:
//   El x y z            positions only
//   El x y z q          + charge label
//   El x y z fx fy fz   + force
//   El x y z q fx fy fz + both
std::vector<AtomicSystem> parse_xyz(const std::string& text);
std::string write_xyz(const std::vector<AtomicSystem>& systems);

}  // namespace phi
