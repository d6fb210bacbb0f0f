#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bpq {

enum class ErrorKind { format, dimension, io, range, config, version, empty };

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::format: return "format";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::io: return "io";
    case ErrorKind::range: return "range";
    case ErrorKind::config: return "config";
    case ErrorKind::version: return "version";
    case ErrorKind::empty: return "empty";
  }
  return "unknown";
}

// Every failure raised by the library carries a category so the CLI can
// report a machine-parseable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void check_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw Error(ErrorKind::dimension, std::string(what) + ": expected dimension " +
                                          std::to_string(want) + ", got " +
                                          std::to_string(got));
  }
}

// Squared L2 distance. Eight partial sums keep the summation order fixed
// while leaving room for the compiler to vectorize.
inline float l2_sqr(const float* a, const float* b, std::size_t d) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= d; i += 8) {
    for (std::size_t u = 0; u < 8; ++u) {
      const float diff = a[i + u] - b[i + u];
      acc[u] += diff * diff;
    }
  }
  float tail = 0.0f;
  for (; i < d; ++i) {
    const float diff = a[i] - b[i];
    tail += diff * diff;
  }
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

inline float dot(const float* a, const float* b, std::size_t d) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= d; i += 8) {
    for (std::size_t u = 0; u < 8; ++u) acc[u] += a[i + u] * b[i + u];
  }
  float tail = 0.0f;
  for (; i < d; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

inline float norm_sqr(const float* a, std::size_t d) { return dot(a, a, d); }

// Splits [0, n) into contiguous chunks, one per thread. Callers write only
// to slots they own, so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n < 2 * static_cast<std::size_t>(threads)) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

/// Operation counter used to instrument distance evaluation. The search
/// routines are templated on the counter type so the uninstrumented path
/// compiles to nothing.
struct NullCounter {
  static constexpr bool enabled = false;
  void candidate(std::uint64_t, std::uint64_t) {}
  void overhead(std::uint64_t, std::uint64_t) {}
};

struct OpCounter {
  static constexpr bool enabled = true;

  std::uint64_t candidates = 0;
  std::uint64_t candidate_lookups = 0;
  std::uint64_t candidate_flops = 0;
  std::uint64_t overhead_lookups = 0;
  std::uint64_t overhead_flops = 0;

  // Work attributable to one candidate evaluation.
  void candidate(std::uint64_t lookups, std::uint64_t flops) {
    ++candidates;
    candidate_lookups += lookups;
    candidate_flops += flops;
  }
  // Per-query or per-cell work shared by many candidates.
  void overhead(std::uint64_t lookups, std::uint64_t flops) {
    overhead_lookups += lookups;
    overhead_flops += flops;
  }

  double lookups_per_candidate() const {
    return candidates ? double(candidate_lookups) / double(candidates) : 0.0;
  }
  double flops_per_candidate() const {
    return candidates ? double(candidate_flops) / double(candidates) : 0.0;
  }
  std::uint64_t ops_per_candidate_total() const {
    return candidate_lookups + candidate_flops;
  }
};

struct Neighbor {
  std::uint32_t id = 0;
  float distance = 0.0f;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

// Keeps the r best candidates, ascending by distance then id.
inline void keep_top(std::vector<Neighbor>& candidates, std::size_t r) {
  if (candidates.size() > r) {
    std::partial_sort(candidates.begin(), candidates.begin() + r, candidates.end(),
                      neighbor_less);
    candidates.resize(r);
  } else {
    std::sort(candidates.begin(), candidates.end(), neighbor_less);
  }
}

struct SearchResult {
  std::vector<Neighbor> neighbors;
  std::size_t candidates = 0;
  std::size_t cells_visited = 0;
};

}  // namespace bpq
