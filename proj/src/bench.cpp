#include "phi/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "phi/datagen.hpp"
#include "phi/eigen.hpp"
#include "phi/graph.hpp"
#include "phi/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace phi {

namespace {

int64_t g_phase_start = 0;

void phase_begin() {
  alloc_reset_peak();
  g_phase_start = alloc_stats().current;
}

int64_t phase_peak_delta() { return std::max<int64_t>(alloc_stats().peak - g_phase_start, 1); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct LimitGuard {
  ~LimitGuard() { alloc_set_limit(0); }
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

// Runs `body` opts.reps times under the phase accounting; wall time is the
// median, peak bytes the maximum phase delta. A memory-budget breach stops
// the phase with an OOM record.
template <class Body>
BenchRecord run_phase(int n, int k, const char* phase, const BenchOptions& opts, Body&& body) {
  BenchRecord rec;
  rec.n_atoms = n;
  rec.k = k;
  rec.phase = phase;
  std::vector<double> times;
  for (int r = 0; r < opts.reps; ++r) {
    phase_begin();
    {
      LimitGuard guard;
      if (opts.memory_budget > 0) alloc_set_limit(g_phase_start + opts.memory_budget);
      const auto t0 = std::chrono::steady_clock::now();
      try {
        body();
      } catch (const std::bad_alloc&) {
        rec.wall_seconds = seconds_since(t0);
        rec.peak_bytes = phase_peak_delta();
        rec.status = BenchStatus::Oom;
        return rec;
      }
      times.push_back(seconds_since(t0));
    }
    rec.peak_bytes = std::max(rec.peak_bytes, phase_peak_delta());
  }
  rec.wall_seconds = median(times);
  return rec;
}

// Contiguous chain segments as independent systems (batched-solve workload).
std::vector<AtomicSystem> split_chain(const AtomicSystem& chain, int parts) {
  std::vector<AtomicSystem> out;
  const int n = chain.n_atoms();
  const int per = std::max(2, n / parts);
  for (int lo = 0; lo < n && int(out.size()) < parts; lo += per) {
    const int hi = (int(out.size()) == parts - 1) ? n : std::min(n, lo + per);
    AtomicSystem seg;
    seg.atomic_numbers.assign(chain.atomic_numbers.begin() + lo, chain.atomic_numbers.begin() + hi);
    seg.positions.assign(chain.positions.begin() + 3 * lo, chain.positions.begin() + 3 * hi);
    out.push_back(std::move(seg));
    if (hi == n) break;
  }
  return out;
}

}  // namespace

std::vector<BenchRecord> scale_sweep(const std::vector<int>& n_list, const std::vector<int>& k_list,
                                     const BenchOptions& opts) {
  if (n_list.empty() || k_list.empty()) throw std::invalid_argument("bench: empty sweep lists");
  if (!std::is_sorted(n_list.begin(), n_list.end()) ||
      !std::is_sorted(k_list.begin(), k_list.end()))
    throw std::invalid_argument("bench: sweep lists must be sorted ascending");
  for (int n : n_list)
    if (n < 2 || n > 100000)
      throw std::invalid_argument("bench: n_atoms must be in [2, 1e5]");
  for (int k : k_list)
    if (k < 1 || k > 32) throw std::invalid_argument("bench: k must be in [1, 32]");
  if (opts.reps < 3) throw std::invalid_argument("bench: wall times need >= 3 repetitions");
  if (opts.parallel_blocks < 1) throw std::invalid_argument("bench: parallel_blocks must be >= 1");
  opts.host.validate();

#ifdef _OPENMP
  const int old_threads = omp_get_max_threads();
  omp_set_num_threads(1);  // pinned single-threaded baseline
#endif

  HostParams host_params = HostParams::init(opts.host, 0);
  std::vector<BenchRecord> records;
  for (int n : n_list) {
    const AtomicSystem chain = gen_carbyne_chain(n);
    for (int k : k_list) {
      const int kk = std::min(k, n);
      PhiConfig pc = opts.phi;
      pc.k = kk;
      AlphaNetParams alpha = AlphaNetParams::init(opts.host.feature_width, pc, 0);

      RadiusGraph graph;
      SparseSym lap;
      BenchRecord r1 = run_phase(n, k, "laplacian", opts, [&] {
        graph = build_radius_graph(chain, opts.host.cutoff, opts.host.max_neighbors);
        lap = build_weighted_laplacian(graph);
      });
      records.push_back(r1);
      if (r1.status == BenchStatus::Oom) continue;

      SpectralBasis basis;
      BenchRecord r2 =
          run_phase(n, k, "eigensolve", opts, [&] { basis = lobpcg(lap, kk, EigOptions{}); });
      records.push_back(r2);
      if (r2.status == BenchStatus::Oom) continue;

      BenchRecord r3 = run_phase(n, k, "forward", opts, [&] {
        HostBatch hb = make_host_batch({chain}, opts.host);
        auto sb = std::make_shared<const SpectralBatch>(
            assemble_spectral_batch({lap}, {basis}, kk));
        Tape tape;
        phi_forward(tape, hb, host_params, &alpha, opts.host, pc, sb);
      });
      records.push_back(r3);

      if (opts.parallel_blocks > 1) {
        // Throughput comparison on independent blocks, reported separately;
        // the single-chain numbers above stay single-threaded.
        std::vector<AtomicSystem> segs = split_chain(chain, opts.parallel_blocks);
        std::vector<SparseSym> blocks;
        for (const AtomicSystem& s : segs)
          blocks.push_back(build_weighted_laplacian(
              build_radius_graph(s, opts.host.cutoff, opts.host.max_neighbors)));
        BatchedLaplacian batch = block_diag_batch(std::move(blocks));
        const int kb = std::min(kk, segs[0].n_atoms());
        BenchRecord r4 = run_phase(n, k, "batch-eigensolve-serial", opts,
                                   [&] { batched_spectral_basis(batch, kb, EigOptions{}, 1); });
        records.push_back(r4);
        BenchRecord r5 = run_phase(n, k, "batch-eigensolve-parallel", opts, [&] {
          batched_spectral_basis(batch, kb, EigOptions{}, opts.parallel_blocks);
        });
        records.push_back(r5);
      }
    }
  }

#ifdef _OPENMP
  omp_set_num_threads(old_threads);
#endif

  std::set<std::tuple<int, int, std::string>> keys;
  for (const BenchRecord& r : records)
    if (!keys.insert({r.n_atoms, r.k, r.phase}).second)
      throw std::logic_error("bench: duplicate (n, k, phase) record");
  return records;
}

std::string bench_csv(const std::vector<BenchRecord>& records) {
  std::ostringstream os;
  os.precision(10);
  os << "n,k,phase,peak_bytes,wall_s,status\n";
  for (const BenchRecord& r : records)
    os << r.n_atoms << "," << r.k << "," << r.phase << "," << r.peak_bytes << ","
       << r.wall_seconds << "," << (r.status == BenchStatus::Ok ? "ok" : "oom") << "\n";
  return os.str();
}

double memory_scaling_slope(const std::vector<BenchRecord>& records, const std::string& phase,
                            int k) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (const BenchRecord& r : records) {
    if (r.phase != phase || r.k != k || r.status != BenchStatus::Ok) continue;
    const double x = std::log(double(r.n_atoms));
    const double y = std::log(double(r.peak_bytes));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++m;
  }
  if (m < 2) throw std::invalid_argument("bench: need at least two points for a slope");
  const double denom = double(m) * sxx - sx * sx;
  if (denom <= 0) throw std::invalid_argument("bench: degenerate abscissa");
  return (double(m) * sxy - sx * sy) / denom;
}

}  // namespace phi
