#include "phi/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "phi/rng.hpp"

namespace phi {

void SyntheticSpec::validate() const {
  if (n_molecules < 1) throw std::invalid_argument("datagen: n_molecules must be positive");
  if (atoms_min < 2) throw std::invalid_argument("datagen: atoms_min must be at least 2");
  if (atoms_max < atoms_min) throw std::invalid_argument("datagen: atoms_max < atoms_min");
  if (!(box > 0)) throw std::invalid_argument("datagen: box must be positive");
  if (lj_epsilon < 0 || lj_sigma <= 0) throw std::invalid_argument("datagen: bad LJ parameters");
}

double coulomb_lj_energy(const AtomicSystem& sys, double lj_epsilon, double lj_sigma) {
  if (!sys.charge_labels) throw std::invalid_argument("coulomb_lj_energy: charges missing");
  const auto& q = *sys.charge_labels;
  const int n = sys.n_atoms();
  double e = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = sys.positions[size_t(3 * i + c)] - sys.positions[size_t(3 * j + c)];
        d2 += d * d;
      }
      if (d2 <= 1e-24) throw std::invalid_argument("coulomb_lj_energy: coincident atoms");
      const double d = std::sqrt(d2);
      e += q[size_t(i)] * q[size_t(j)] / d;
      if (lj_epsilon != 0) {
        const double s6 = std::pow(lj_sigma / d, 6.0);
        e += 4.0 * lj_epsilon * (s6 * s6 - s6);
      }
    }
  return e;
}

namespace {

AtomicSystem gen_one_molecule(const SyntheticSpec& spec, uint64_t index) {
  Rng rng = derive_rng(spec.seed, "datagen.molecule", index);
  const int n = rng.uniform_int(spec.atoms_min, spec.atoms_max);
  const double dmin = 0.8 * spec.lj_sigma;

  AtomicSystem sys;
  std::vector<double> q(size_t(n), 0.0);
  if (spec.charge_scheme == ChargeScheme::NeutralPairs) {
    for (int i = 0; i + 1 < n; i += 2) {
      q[size_t(i)] = 1.0;
      q[size_t(i + 1)] = -1.0;
    }
  } else {
    // dyadic-grid charges: sums of a few hundred of these are exact in
    // binary64, so neutralization holds in any summation order
    double s = 0;
    for (int i = 0; i + 1 < n; ++i) {
      q[size_t(i)] = double(rng.uniform_int(-1024, 1024)) / 1024.0;
      s += q[size_t(i)];
    }
    q[size_t(n - 1)] = -s;
  }
  // shuffle charge roles so the pairing is positionally uninformative
  for (int i = n - 1; i > 0; --i) std::swap(q[size_t(i)], q[size_t(rng.uniform_int(0, i))]);

  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      double x[3];
      for (auto& v : x) v = rng.uniform(0.0, spec.box);
      bool ok = true;
      for (int j = 0; j < i && ok; ++j) {
        double d2 = 0;
        for (int c = 0; c < 3; ++c) {
          const double d = x[c] - sys.positions[size_t(3 * j + c)];
          d2 += d * d;
        }
        ok = d2 >= dmin * dmin;
      }
      if (ok) {
        for (double v : x) sys.positions.push_back(v);
        placed = true;
      }
    }
    if (!placed) throw std::runtime_error("datagen: rejection budget exhausted");
    const double qi = q[size_t(i)];
    sys.atomic_numbers.push_back(qi > 0.5 ? 11 : (qi < -0.5 ? 17 : 18));
  }
  sys.charge_labels = q;
  sys.energy = coulomb_lj_energy(sys, spec.lj_epsilon, spec.lj_sigma);
  return sys;
}

}  // namespace

std::vector<AtomicSystem> gen_point_charge_set(const SyntheticSpec& spec, int threads) {
  spec.validate();
  std::vector<AtomicSystem> out(size_t(spec.n_molecules));
  std::exception_ptr err;  // exceptions must not unwind out of the parallel region
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
  for (int i = 0; i < spec.n_molecules; ++i) {
    try {
      out[size_t(i)] = gen_one_molecule(spec, uint64_t(i));
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  return out;
}

AtomicSystem gen_carbyne_chain(int n_atoms, double spacing) {
  if (n_atoms < 2) throw std::invalid_argument("carbyne chain needs at least 2 atoms");
  if (!(spacing > 0)) throw std::invalid_argument("carbyne chain needs positive spacing");
  AtomicSystem sys;
  sys.atomic_numbers.assign(size_t(n_atoms), 6);
  sys.positions.reserve(size_t(n_atoms) * 3);
  for (int i = 0; i < n_atoms; ++i) {
    sys.positions.push_back(double(i) * spacing);
    sys.positions.push_back(0.0);
    sys.positions.push_back(0.0);
  }
  return sys;
}

DataSplit split_dataset(int n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("split_dataset: empty dataset");
  std::vector<int> idx(size_t(n), 0);
  for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
  Rng rng = derive_rng(seed, "datagen.split");
  for (int i = n - 1; i > 0; --i) std::swap(idx[size_t(i)], idx[size_t(rng.uniform_int(0, i))]);
  const int n_train = int(std::floor(0.8 * n));
  const int n_val = int(std::floor(0.1 * n));
  DataSplit s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  return s;
}

}  // namespace phi
