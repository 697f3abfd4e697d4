#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phi/electro.hpp"
#include "phi/host.hpp"

namespace phi {

// --- allocation instrumentation -------------------------------------------
// Implemented in the counting-allocator translation unit, which replaces the
// global operator new/delete for any binary that links it. Byte-exact and
// deterministic, unlike OS-level RSS sampling.

struct AllocStats {
  int64_t current = 0;  // live bytes
  int64_t peak = 0;     // high-water mark since the last reset
  int64_t total = 0;    // cumulative bytes ever allocated
};

AllocStats alloc_stats();
void alloc_reset_peak();              // peak := current
void alloc_set_limit(int64_t bytes);  // live-byte ceiling; 0 = unlimited; breach throws bad_alloc
int64_t alloc_limit();

// --- scaling benchmark ------------------------------------------------------

enum class BenchStatus { Ok, Oom };

struct BenchRecord {
  int n_atoms = 0;
  int k = 0;
  std::string phase;  // laplacian | eigensolve | forward (+ batch variants)
  int64_t peak_bytes = 0;
  double wall_seconds = 0;
  BenchStatus status = BenchStatus::Ok;
};

struct BenchOptions {
  int reps = 3;                // wall time = median of >= 3 runs
  int64_t memory_budget = 0;   // counted live bytes allowed per phase; 0 = unlimited
  int parallel_blocks = 1;     // > 1 adds batched eigensolves, serial vs parallel rows
  HostConfig host;             // forward-phase model size
  PhiConfig phi;
  BenchOptions() {
    host.feature_width = 16;
    host.n_layers = 2;
    host.n_rbf = 16;
  }
};

// Instrumented build -> eigensolve -> forward over carbyne chains for every
// (n, k) pair. Inputs must be sorted ascending; n <= 1e5, k <= 32. A memory-
// budget breach is recorded as an OOM row for that phase, never a crash.
std::vector<BenchRecord> scale_sweep(const std::vector<int>& n_list,
                                     const std::vector<int>& k_list,
                                     const BenchOptions& opts = {});

// "n,k,phase,peak_bytes,wall_s,status" rows.
std::string bench_csv(const std::vector<BenchRecord>& records);

// Log-log OLS slope of peak_bytes vs n over the Ok rows of one phase at one k.
double memory_scaling_slope(const std::vector<BenchRecord>& records, const std::string& phase,
                            int k);

}  // namespace phi
