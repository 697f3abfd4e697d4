// Counting allocator: replaces the global operator new/delete for any binary
// linking this translation unit. Every allocation carries a 16-byte size
// header so frees are accounted exactly; an optional live-byte limit turns
// an over-budget allocation into std::bad_alloc.

#include "phi/bench.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <new>

namespace {

std::atomic<int64_t> g_current{0};
std::atomic<int64_t> g_peak{0};
std::atomic<int64_t> g_total{0};
std::atomic<int64_t> g_limit{0};

constexpr size_t kHeader = 16;  // keeps the user pointer at malloc alignment

void* counted_alloc(size_t sz) {
  if (sz == 0) sz = 1;
  const int64_t limit = g_limit.load(std::memory_order_relaxed);
  if (limit > 0 && g_current.load(std::memory_order_relaxed) + int64_t(sz) > limit)
    throw std::bad_alloc();
  void* raw = std::malloc(sz + kHeader);
  if (!raw) throw std::bad_alloc();
  std::memcpy(raw, &sz, sizeof sz);
  const int64_t now = g_current.fetch_add(int64_t(sz), std::memory_order_relaxed) + int64_t(sz);
  g_total.fetch_add(int64_t(sz), std::memory_order_relaxed);
  int64_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
  return static_cast<char*>(raw) + kHeader;
}

void counted_free(void* p) noexcept {
  if (!p) return;
  void* raw = static_cast<char*>(p) - kHeader;
  size_t sz = 0;
  std::memcpy(&sz, raw, sizeof sz);
  g_current.fetch_sub(int64_t(sz), std::memory_order_relaxed);
  std::free(raw);
}

}  // namespace

namespace phi {

AllocStats alloc_stats() {
  AllocStats s;
  s.current = g_current.load(std::memory_order_relaxed);
  s.peak = g_peak.load(std::memory_order_relaxed);
  s.total = g_total.load(std::memory_order_relaxed);
  return s;
}

void alloc_reset_peak() { g_peak.store(g_current.load(std::memory_order_relaxed)); }

void alloc_set_limit(int64_t bytes) { g_limit.store(bytes); }

int64_t alloc_limit() { return g_limit.load(); }

}  // namespace phi

void* operator new(std::size_t sz) { return counted_alloc(sz); }
void* operator new[](std::size_t sz) { return counted_alloc(sz); }
void* operator new(std::size_t sz, const std::nothrow_t&) noexcept {
  try {
    return counted_alloc(sz);
  } catch (...) {
    return nullptr;
  }
}
void* operator new[](std::size_t sz, const std::nothrow_t&) noexcept {
  try {
    return counted_alloc(sz);
  } catch (...) {
    return nullptr;
  }
}
void operator delete(void* p) noexcept { counted_free(p); }
void operator delete[](void* p) noexcept { counted_free(p); }
void operator delete(void* p, std::size_t) noexcept { counted_free(p); }
void operator delete[](void* p, std::size_t) noexcept { counted_free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { counted_free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { counted_free(p); }
