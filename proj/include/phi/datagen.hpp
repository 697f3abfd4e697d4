#pragma once

#include <cstdint>
#include <vector>

#include "phi/system.hpp"

namespace phi {

enum class ChargeScheme { NeutralPairs, RandomNeutralized };

struct SyntheticSpec {
  int n_molecules = 100;
  int atoms_min = 4;
  int atoms_max = 12;
  double box = 5.0;  // Angstrom
  uint64_t seed = 0;
  ChargeScheme charge_scheme = ChargeScheme::NeutralPairs;
  double lj_epsilon = 0.1;
  double lj_sigma = 1.5;
  void validate() const;
};

// E = sum_{i<j} q_i q_j / d_ij + 4 eps [ (sigma/d)^12 - (sigma/d)^6 ],
// reduced units (Coulomb constant 1, charges in e, distances in Angstrom).
double coulomb_lj_energy(const AtomicSystem& sys, double lj_epsilon, double lj_sigma);

// Reproducible point-charge molecules: geometries rejection-sampled to keep
// min pairwise distance >= 0.8 sigma, energies labeled with the exact
// pairwise sum, charges kept only as diagnostics. Elements encode the charge
// role (Na +1, Cl -1, Ar 0) so structure alone determines the label.
std::vector<AtomicSystem> gen_point_charge_set(const SyntheticSpec& spec, int threads = 1);

// Collinear carbon chain at uniform spacing along x.
AtomicSystem gen_carbyne_chain(int n_atoms, double spacing = 1.3);

struct DataSplit {
  std::vector<int> train, val, test;
};

// Seed-stable shuffle split, 80/10/10.
DataSplit split_dataset(int n, uint64_t seed);

}  // namespace phi
