#include "phi/md.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "phi/rng.hpp"

namespace phi {

void MDState::validate() const {
  const size_t n = masses.size();
  if (n == 0) throw std::invalid_argument("md state: no atoms");
  if (positions.size() != 3 * n || velocities.size() != 3 * n)
    throw std::invalid_argument("md state: positions/velocities must be 3n");
  for (double m : masses)
    if (!(m > 0.0)) throw std::invalid_argument("md state: masses must be positive");
  for (size_t i = 1; i < trace.size(); ++i)
    if (!(trace[i].t > trace[i - 1].t))
      throw std::invalid_argument("md state: trace times must be strictly increasing");
}

namespace {

double kinetic_energy(const MDState& s) {
  double ke = 0.0;
  for (int i = 0; i < s.n_atoms(); ++i) {
    const double m = s.masses[size_t(i)];
    for (int c = 0; c < 3; ++c) {
      const double v = s.velocities[size_t(3 * i + c)];
      ke += 0.5 * m * v * v;
    }
  }
  return ke;
}

void require_finite_forces(const ForceEval& ev, size_t want) {
  if (ev.forces.size() != want) throw std::invalid_argument("md: force vector has wrong size");
  for (double f : ev.forces)
    if (!std::isfinite(f)) throw NumericError("md: non-finite force");
  if (!std::isfinite(ev.potential)) throw NumericError("md: non-finite potential");
}

}  // namespace

void velocity_verlet_step(MDState& state, const ForceFn& force, double dt, ForceEval& current) {
  if (!(dt > 0.0)) throw std::invalid_argument("md: dt must be positive");
  const size_t n3 = state.positions.size();
  require_finite_forces(current, n3);
  for (size_t i = 0; i < n3; ++i) {
    const double a = current.forces[i] / state.masses[i / 3];
    state.positions[i] += dt * state.velocities[i] + 0.5 * dt * dt * a;
    state.velocities[i] += 0.5 * dt * a;  // half kick with the old acceleration
  }
  ForceEval next = force(state.positions);
  require_finite_forces(next, n3);
  for (size_t i = 0; i < n3; ++i)
    state.velocities[i] += 0.5 * dt * next.forces[i] / state.masses[i / 3];
  state.time += dt;
  current = std::move(next);
}

MDState nve_run(MDState initial, const ForceFn& force, int steps, double dt) {
  initial.validate();
  if (steps < 0) throw std::invalid_argument("md: steps must be >= 0");
  ForceEval current = force(initial.positions);
  require_finite_forces(current, initial.positions.size());
  initial.trace.push_back({initial.time, kinetic_energy(initial), current.potential});
  for (int s = 0; s < steps; ++s) {
    velocity_verlet_step(initial, force, dt, current);
    initial.trace.push_back({initial.time, kinetic_energy(initial), current.potential});
  }
  return initial;
}

DriftReport energy_drift(const std::vector<TracePoint>& trace, bool force_absolute) {
  if (trace.size() < 2) throw std::invalid_argument("energy_drift: need at least two samples");
  const double e0 = trace[0].total();
  DriftReport rep;
  rep.absolute = force_absolute || e0 == 0.0;
  const double scale = rep.absolute ? 1.0 : std::fabs(e0);

  // y = deviation from the baseline, x = elapsed time in ps.
  const size_t n = trace.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const TracePoint& p : trace) {
    const double y = (p.total() - e0) / scale;
    const double x = (p.t - trace[0].t) * 1e-3;
    rep.max_drift = std::max(rep.max_drift, std::fabs(y));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = double(n) * sxx - sx * sx;
  if (denom > 0.0) {
    rep.slope = (double(n) * sxy - sx * sy) / denom;
    const double intercept = (sy - rep.slope * sx) / double(n);
    double rss = 0.0;
    for (const TracePoint& p : trace) {
      const double y = (p.total() - e0) / scale;
      const double x = (p.t - trace[0].t) * 1e-3;
      const double r = y - (intercept + rep.slope * x);
      rss += r * r;
    }
    if (n > 2) rep.slope_stderr = std::sqrt(rss / double(n - 2) / (sxx - sx * sx / double(n)));
  }
  return rep;
}

double atomic_mass(int z) {
  static const double table[] = {
      1.008,  4.0026, 6.94,   9.0122, 10.81,  12.011, 14.007, 15.999, 18.998,
      20.180, 22.990, 24.305, 26.982, 28.085, 30.974, 32.06,  35.45,  39.948,
      39.098, 40.078, 44.956, 47.867, 50.942, 51.996, 54.938, 55.845, 58.933,
      58.693, 63.546, 65.38,  69.723, 72.630, 74.922, 78.971, 79.904, 83.798,
      85.468, 87.62,  88.906, 91.224, 92.906, 95.95,  98.0,   101.07, 102.91,
      106.42, 107.87, 112.41, 114.82, 118.71, 121.76, 127.60, 126.90, 131.29};
  if (z < 1 || z > 54) throw std::invalid_argument("atomic_mass: element out of range");
  return table[size_t(z) - 1];
}

MDState init_md_state(const AtomicSystem& sys, double temperature_K, uint64_t seed) {
  sys.validate();
  if (temperature_K < 0.0) throw std::invalid_argument("md: negative temperature");
  MDState s;
  const int n = sys.n_atoms();
  s.positions = sys.positions;
  s.masses.reserve(size_t(n));
  for (int z : sys.atomic_numbers) s.masses.push_back(atomic_mass(z));
  s.velocities.assign(size_t(3 * n), 0.0);
  Rng rng = derive_rng(seed, "md.velocities");
  for (int i = 0; i < n; ++i) {
    // <v_c^2> = kB T / m in eV/amu; kAccelUnit converts to (A/fs)^2.
    const double sigma = std::sqrt(kBoltzmannEv * temperature_K * kAccelUnit / s.masses[size_t(i)]);
    for (int c = 0; c < 3; ++c) s.velocities[size_t(3 * i + c)] = sigma * rng.normal();
  }
  double mtot = 0.0, p[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) {
    mtot += s.masses[size_t(i)];
    for (int c = 0; c < 3; ++c) p[c] += s.masses[size_t(i)] * s.velocities[size_t(3 * i + c)];
  }
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) s.velocities[size_t(3 * i + c)] -= p[c] / mtot;
  return s;
}

MDRun nve_run(const AtomicSystem& sys, Model& model, int steps, double dt, ForceMode mode,
              double temperature_K, uint64_t seed, int frame_stride) {
  if (steps < 0) throw std::invalid_argument("md: steps must be >= 0");
  if (frame_stride < 1) throw std::invalid_argument("md: frame_stride must be >= 1");
  MDState s = init_md_state(sys, temperature_K, seed);
  s.validate();

  AtomicSystem scratch = sys;
  ForceFn force = [&model, scratch, mode](const std::vector<double>& pos) mutable {
    scratch.positions = pos;
    ForceResult fr =
        compute_forces({scratch}, model.host, model.with_phi ? &model.alpha : nullptr,
                       model.host_cfg, model.phi_cfg, mode, /*warn_on_fallback=*/false);
    ForceEval ev;
    ev.forces.resize(pos.size());
    // forces arrive in eV/A; scale so a = f/m lands in A/fs^2 and the
    // potential shares the kinetic unit (exact inverses, so the trace sum
    // converts back to eV losslessly).
    for (size_t i = 0; i < pos.size(); ++i) ev.forces[i] = fr.forces[0][i] * kAccelUnit;
    ev.potential = fr.energies[0] * kAccelUnit;
    return ev;
  };

  MDRun run;
  ForceEval current = force(s.positions);
  require_finite_forces(current, s.positions.size());
  s.trace.push_back(
      {s.time, kinetic_energy(s) * kKineticUnit, current.potential * kKineticUnit});
  run.frames.push_back(s.positions);
  run.frame_times.push_back(s.time);
  for (int step = 1; step <= steps; ++step) {
    velocity_verlet_step(s, force, dt, current);
    s.trace.push_back(
        {s.time, kinetic_energy(s) * kKineticUnit, current.potential * kKineticUnit});
    if (step % frame_stride == 0 || step == steps) {
      run.frames.push_back(s.positions);
      run.frame_times.push_back(s.time);
    }
  }
  run.state = std::move(s);
  return run;
}

RelaxResult relax_structure(const AtomicSystem& sys, Model& model, ForceMode mode, int max_iter,
                            double fmax_tol) {
  if (max_iter < 0) throw std::invalid_argument("relax: max_iter must be >= 0");
  RelaxResult out;
  out.system = sys;
  const int n3 = 3 * sys.n_atoms();
  std::vector<double> v(size_t(n3), 0.0);
  // FIRE parameters (standard published defaults, dt in the optimizer's own
  // fictitious time with unit masses).
  double dt = 0.02, alpha = 0.1;
  const double dt_max = 0.2;
  int since_uphill = 0;
  auto eval = [&](const AtomicSystem& s) {
    return compute_forces({s}, model.host, model.with_phi ? &model.alpha : nullptr,
                          model.host_cfg, model.phi_cfg, mode, /*warn_on_fallback=*/false);
  };
  ForceResult cur = eval(out.system);
  auto fmax_of = [](const std::vector<double>& f) {
    double m = 0;
    for (double x : f) m = std::max(m, std::fabs(x));
    return m;
  };
  out.fmax = fmax_of(cur.forces[0]);
  for (int it = 0; it < max_iter && out.fmax > fmax_tol; ++it) {
    const std::vector<double>& f = cur.forces[0];
    double p = 0;
    for (int i = 0; i < n3; ++i) p += f[size_t(i)] * v[size_t(i)];
    if (p > 0) {
      double vn = 0, fn = 0;
      for (int i = 0; i < n3; ++i) {
        vn += v[size_t(i)] * v[size_t(i)];
        fn += f[size_t(i)] * f[size_t(i)];
      }
      vn = std::sqrt(vn);
      fn = std::sqrt(std::max(fn, 1e-300));
      for (int i = 0; i < n3; ++i)
        v[size_t(i)] = (1.0 - alpha) * v[size_t(i)] + alpha * vn * f[size_t(i)] / fn;
      if (++since_uphill > 5) {
        dt = std::min(dt * 1.1, dt_max);
        alpha *= 0.99;
      }
    } else {
      std::fill(v.begin(), v.end(), 0.0);
      dt *= 0.5;
      alpha = 0.1;
      since_uphill = 0;
    }
    for (int i = 0; i < n3; ++i) {
      v[size_t(i)] += dt * f[size_t(i)];
      out.system.positions[size_t(i)] += dt * v[size_t(i)];
    }
    cur = eval(out.system);
    out.fmax = fmax_of(cur.forces[0]);
    out.iterations = it + 1;
  }
  return out;
}

std::string trajectory_xyz(const AtomicSystem& sys, const MDRun& run) {
  std::ostringstream os;
  os.precision(17);
  const int n = sys.n_atoms();
  for (size_t f = 0; f < run.frames.size(); ++f) {
    os << n << "\n";
    os << "time_fs=" << run.frame_times[f] << "\n";
    for (int i = 0; i < n; ++i) {
      os << z_to_element(sys.atomic_numbers[size_t(i)]);
      for (int c = 0; c < 3; ++c) os << " " << run.frames[f][size_t(3 * i + c)];
      os << "\n";
    }
  }
  return os.str();
}

std::string drift_csv(const std::vector<TracePoint>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "t_fs,e_total,e_kin,e_pot\n";
  for (const TracePoint& p : trace)
    os << p.t << "," << p.total() << "," << p.e_kin << "," << p.e_pot << "\n";
  return os.str();
}

}  // namespace phi
