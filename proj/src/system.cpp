#include "phi/system.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_map>

namespace phi {

namespace {

const std::vector<std::string> kElements = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si",
    "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni",
    "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo",
    "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe"};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

double parse_double(const std::string& tok, int line_no, const char* what) {
  size_t pos = 0;
  double v;
  try {
    v = std::stod(tok, &pos);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what + " '" + tok + "'");
  }
  if (pos != tok.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what + " '" + tok + "'");
  return v;
}

}  // namespace

int element_to_z(const std::string& symbol) {
  for (size_t i = 0; i < kElements.size(); ++i)
    if (kElements[i] == symbol) return int(i) + 1;
  throw ParseError("unknown element '" + symbol + "'");
}

const std::string& z_to_element(int z) {
  if (z < 1 || z > int(kElements.size()))
    throw ParseError("atomic number " + std::to_string(z) + " outside element table");
  return kElements[size_t(z) - 1];
}

void AtomicSystem::validate() const {
  const int n = n_atoms();
  if (n < 1) throw ParseError("system has no atoms");
  if (int(positions.size()) != n * 3) throw ParseError("positions length mismatch");
  for (int z : atomic_numbers)
    if (z < 1) throw ParseError("atomic number below 1");
  if (forces && int(forces->size()) != n * 3) throw ParseError("forces length mismatch");
  if (charge_labels && int(charge_labels->size()) != n)
    throw ParseError("charge labels length mismatch");
  // Coincidence check via spatial hashing: atoms closer than 1e-6 Å share a
  // cell or one of its 26 neighbors at this cell size, so the scan is O(n).
  const double cell = 1e-3;
  auto key = [cell](double x, double y, double z) {
    auto q = [cell](double v) { return int64_t(std::floor(v / cell)); };
    return std::to_string(q(x)) + "," + std::to_string(q(y)) + "," + std::to_string(q(z));
  };
  std::unordered_map<std::string, std::vector<int>> grid;
  for (int i = 0; i < n; ++i)
    grid[key(positions[size_t(i) * 3], positions[size_t(i) * 3 + 1],
             positions[size_t(i) * 3 + 2])]
        .push_back(i);
  for (int i = 0; i < n; ++i) {
    const double x = positions[size_t(i) * 3], y = positions[size_t(i) * 3 + 1],
                 z = positions[size_t(i) * 3 + 2];
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = grid.find(key(x + dx * cell, y + dy * cell, z + dz * cell));
          if (it == grid.end()) continue;
          for (int j : it->second) {
            if (j <= i) continue;
            const double ddx = x - positions[size_t(j) * 3];
            const double ddy = y - positions[size_t(j) * 3 + 1];
            const double ddz = z - positions[size_t(j) * 3 + 2];
            if (ddx * ddx + ddy * ddy + ddz * ddz <= 1e-12)
              throw ParseError("atoms " + std::to_string(i) + " and " + std::to_string(j) +
                               " coincide");
          }
        }
  }
}

std::vector<AtomicSystem> parse_xyz(const std::string& text) {
  std::vector<std::string> lines;
  {
    std::string cur;
    for (char c : text) {
      if (c == '\n') {
        if (!cur.empty() && cur.back() == '\r') cur.pop_back();
        lines.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) lines.push_back(cur);
  }

  std::vector<AtomicSystem> out;
  size_t li = 0;
  while (true) {
    while (li < lines.size() && split_ws(lines[li]).empty()) ++li;
    if (li >= lines.size()) break;

    const int count_line_no = int(li) + 1;
    auto toks = split_ws(lines[li]);
    int n = 0;
    bool ok = toks.size() == 1;
    if (ok) {
      try {
        size_t pos = 0;
        n = std::stoi(toks[0], &pos);
        ok = pos == toks[0].size() && n >= 1;
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok)
      throw ParseError("line " + std::to_string(count_line_no) + ": malformed atom count '" +
                       lines[li] + "'");
    ++li;

    if (li >= lines.size())
      throw ParseError("line " + std::to_string(int(li) + 1) + ": missing comment line");
    AtomicSystem sys;
    const std::string comment = lines[li];
    const auto epos = comment.find("energy=");
    if (epos != std::string::npos) {
      auto rest = comment.substr(epos + 7);
      const auto end = rest.find_first_of(" \t");
      if (end != std::string::npos) rest = rest.substr(0, end);
      sys.energy = parse_double(rest, int(li) + 1, "energy");
    }
    ++li;

    bool any_charge = false, any_force = false;
    for (int a = 0; a < n; ++a, ++li) {
      if (li >= lines.size())
        throw ParseError("frame starting at line " + std::to_string(count_line_no) +
                         ": expected " + std::to_string(n) + " atom rows, file ended after " +
                         std::to_string(a));
      const int line_no = int(li) + 1;
      auto row = split_ws(lines[li]);
      if (row.size() != 4 && row.size() != 5 && row.size() != 7 && row.size() != 8)
        throw ParseError("line " + std::to_string(line_no) + ": atom row has " +
                         std::to_string(row.size()) + " fields, expected 4, 5, 7 or 8");
      sys.atomic_numbers.push_back(element_to_z(row[0]));
      for (int c = 0; c < 3; ++c)
        sys.positions.push_back(parse_double(row[size_t(c) + 1], line_no, "coordinate"));
      const bool has_charge = row.size() == 5 || row.size() == 8;
      const bool has_force = row.size() >= 7;
      if (a == 0) {
        any_charge = has_charge;
        any_force = has_force;
        if (any_charge) sys.charge_labels.emplace();
        if (any_force) sys.forces.emplace();
      } else if (has_charge != any_charge || has_force != any_force) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": atom rows in one frame must share a column layout");
      }
      if (has_charge) sys.charge_labels->push_back(parse_double(row[4], line_no, "charge"));
      if (has_force) {
        const size_t base = row.size() == 7 ? 4 : 5;
        for (size_t c = 0; c < 3; ++c)
          sys.forces->push_back(parse_double(row[base + c], line_no, "force"));
      }
    }
    sys.validate();
    out.push_back(std::move(sys));
  }
  return out;
}

std::string write_xyz(const std::vector<AtomicSystem>& systems) {
  std::string out;
  for (const auto& sys : systems) {
    out += std::to_string(sys.n_atoms());
    out += '\n';
    if (sys.energy) out += "energy=" + fmt(*sys.energy);
    out += '\n';
    for (int i = 0; i < sys.n_atoms(); ++i) {
      out += z_to_element(sys.atomic_numbers[size_t(i)]);
      for (int c = 0; c < 3; ++c) out += " " + fmt(sys.positions[size_t(i) * 3 + size_t(c)]);
      if (sys.charge_labels) out += " " + fmt((*sys.charge_labels)[size_t(i)]);
      if (sys.forces)
        for (int c = 0; c < 3; ++c) out += " " + fmt((*sys.forces)[size_t(i) * 3 + size_t(c)]);
      out += '\n';
    }
  }
  return out;
}

}  // namespace phi
