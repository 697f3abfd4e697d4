#pragma once

#include <functional>
#include <string>
#include <vector>

#include "phi/host.hpp"
#include "phi/system.hpp"
#include "phi/trainer.hpp"

namespace phi {

// Unit system: Angstrom / femtosecond / amu, energies reported in eV.
// One eV/Angstrom acting on one amu gives kAccelUnit Angstrom/fs^2; the
// kinetic conversion is its exact inverse so the two directions of the
// energy bookkeeping cancel identically.
constexpr double kAccelUnit = 9.6485332e-3;        // (eV/A)/amu -> A/fs^2
constexpr double kKineticUnit = 1.0 / kAccelUnit;  // amu*(A/fs)^2 -> eV
constexpr double kBoltzmannEv = 8.617333262e-5;    // eV/K

struct TracePoint {
  double t = 0;      // fs
  double e_kin = 0;  // same energy unit as the force field's potential
  double e_pot = 0;
  double total() const { return e_kin + e_pot; }
};

struct MDState {
  std::vector<double> positions;   // 3n flat (x0 y0 z0 x1 ...), Angstrom
  std::vector<double> velocities;  // 3n, Angstrom/fs
  std::vector<double> masses;      // n, amu
  double time = 0;                 // fs
  std::vector<TracePoint> trace;
  int n_atoms() const { return int(masses.size()); }
  void validate() const;  // sizes consistent, masses > 0, trace times increasing
};

struct ForceEval {
  std::vector<double> forces;  // 3n; the integrator uses a_i = f_i / m_i
  double potential = 0;
};
using ForceFn = std::function<ForceEval(const std::vector<double>& positions)>;

// One velocity-Verlet step in place: r' = r + dt v + dt^2/2 a,
// v' = v + dt/2 (a + a'). `current` must hold the evaluation at the state's
// positions and is replaced by the evaluation at the new positions — exactly
// one new force call per step. Throws on non-finite forces.
void velocity_verlet_step(MDState& state, const ForceFn& force, double dt, ForceEval& current);

// Integrates `steps` steps, recording (t, e_kin, e_pot) at the start and
// after every step.
MDState nve_run(MDState initial, const ForceFn& force, int steps, double dt);

struct DriftReport {
  double max_drift = 0;     // max |E(t)-E(0)| / |E(0)|, or absolute when flagged
  double slope = 0;         // least-squares drift rate per ps (fraction, or energy when absolute)
  double slope_stderr = 0;  // OLS standard error of the slope
  bool absolute = false;    // zero baseline: absolute differences reported instead
};

DriftReport energy_drift(const std::vector<TracePoint>& trace, bool force_absolute = false);

// Standard atomic weight in amu for Z = 1..54.
double atomic_mass(int z);

// Maxwell-Boltzmann velocities at the given temperature with the center-of-
// mass momentum removed; masses from the element table.
MDState init_md_state(const AtomicSystem& sys, double temperature_K, uint64_t seed);

struct MDRun {
  MDState state;                            // final state; trace energies in eV
  std::vector<std::vector<double>> frames;  // sampled positions, frame 0 = start
  std::vector<double> frame_times;          // fs
};

// NVE run driven by the model's forces (autodiff or finite-difference mode).
MDRun nve_run(const AtomicSystem& sys, Model& model, int steps, double dt, ForceMode mode,
              double temperature_K = 300.0, uint64_t seed = 0, int frame_stride = 100);

struct RelaxResult {
  AtomicSystem system;  // relaxed geometry
  double fmax = 0;      // max |force component| at the returned geometry, eV/A
  int iterations = 0;
};

// Structural relaxation on the model's energy surface (FIRE: velocity-mixed
// steepest descent with adaptive step). Synthetic geometries are generally far
// from any minimum of the *learned* surface, so NVE from a raw geometry mostly
// measures the starting transient; relax first for meaningful drift numbers.
RelaxResult relax_structure(const AtomicSystem& sys, Model& model, ForceMode mode,
                            int max_iter = 5000, double fmax_tol = 1e-3);

// Multi-frame XYZ of the sampled frames (species from the template system).
std::string trajectory_xyz(const AtomicSystem& sys, const MDRun& run);
// "t_fs,e_total,e_kin,e_pot" rows.
std::string drift_csv(const std::vector<TracePoint>& trace);

}  // namespace phi
