#pragma once

// Independent reference computations used only by the tests. They favour
// the plainest possible formulation (double precision, exhaustive loops) over
// speed, and never call into the code paths they check.

#include <algorithm>
#include <cmath>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <unistd.h>
#include <vector>

#include "bpq/bpq.hpp"

namespace oracle {

inline double sq_dist(const float* a, const float* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = double(a[k]) - double(b[k]);
    s += diff * diff;
  }
  return s;
}

inline double sq_dist(std::span<const float> a, std::span<const float> b) { return sq_dist(a.data(), b.data(), a.size()); }

inline double dot(const float* a, const float* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += double(a[k]) * double(b[k]);
  return s;
}

struct Hit {
  std::uint32_t id;
  double distance;
};

// O(N) scan per query, full sort, ties by id.
inline std::vector<std::vector<Hit>> knn(const bpq::DenseVectorSet& base, const bpq::DenseVectorSet& queries,
                                         std::size_t k) {
  std::vector<std::vector<Hit>> out(queries.count());
  for (std::size_t q = 0; q < queries.count(); ++q) {
    std::vector<Hit> all;
    for (std::size_t i = 0; i < base.count(); ++i) {
      all.push_back({std::uint32_t(i), sq_dist(queries.ptr(q), base.ptr(i), base.dim())});
    }
    std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
      return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
    });
    all.resize(std::min(k, all.size()));
    out[q] = std::move(all);
  }
  return out;
}

inline std::uint32_t nearest(const bpq::Codebook& book, const float* x) {
  std::uint32_t best = 0;
  double best_d = sq_dist(x, book.centroid(0), book.dim());
  for (std::size_t c = 1; c < book.size(); ++c) {
    const double d = sq_dist(x, book.centroid(c), book.dim());
    if (d < best_d) {
      best_d = d;
      best = std::uint32_t(c);
    }
  }
  return best;
}

// Every (i, j) ordered by the float pair sum, then i, then j.
inline std::vector<std::tuple<float, std::uint32_t, std::uint32_t>> sorted_pairs(const std::vector<float>& r1,
                                                                               const std::vector<float>& r2) {
  std::vector<std::tuple<float, std::uint32_t, std::uint32_t>> all;
  for (std::uint32_t i = 0; i < r1.size(); ++i) {
    for (std::uint32_t j = 0; j < r2.size(); ++j) all.emplace_back(r1[i] + r2[j], i, j);
  }
  std::sort(all.begin(), all.end());
  return all;
}

// Joint search over all T*T concatenated centroids, no separability assumed.
inline bpq::CellId exhaustive_cell(const bpq::CoarsePair& coarse, const float* x) {
  const std::size_t h = coarse.half_dim();
  std::vector<float> c(2 * h);
  bpq::CellId best{};
  double best_d = std::numeric_limits<double>::infinity();
  for (std::uint32_t i = 0; i < coarse.size(); ++i) {
    for (std::uint32_t j = 0; j < coarse.size(); ++j) {
      std::copy_n(coarse.book1.centroid(i), h, c.data());
      std::copy_n(coarse.book2.centroid(j), h, c.data() + h);
      const double d = sq_dist(x, c.data(), 2 * h);
      if (d < best_d) {
        best_d = d;
        best = {i, j};
      }
    }
  }
  return best;
}

// Position of each stored entry, with its cell, recovered from the offsets.
struct StoredEntry {
  std::size_t pos;
  bpq::CellId cell;
};

inline std::vector<StoredEntry> stored_entries(const bpq::CellTable& cells) {
  std::vector<StoredEntry> out;
  for (std::uint32_t i = 0; i < cells.t; ++i) {
    for (std::uint32_t j = 0; j < cells.t; ++j) {
      for (auto p = cells.begin({i, j}); p < cells.end({i, j}); ++p) out.push_back({std::size_t(p), {i, j}});
    }
  }
  return out;
}

inline bpq::DenseVectorSet random_set(std::size_t n, std::size_t d, std::uint64_t seed, float lo = -1.0f,
                                      float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  bpq::DenseVectorSet s(d, n);
  for (auto& v : s.data()) v = u(rng);
  return s;
}

inline double relative(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max(std::abs(b), floor);
}

// Independent subspaces of different variance, then mixed by a random
// orthogonal matrix so axis-aligned PQ splits are poor.
inline bpq::DenseVectorSet rotated_structure(std::size_t n, std::size_t dim, std::uint64_t seed,
                                             bpq::Rotation* mixing = nullptr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  bpq::DenseVectorSet raw(dim, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim; ++d) raw.ptr(i)[d] = normal(rng) * std::pow(0.7f, float(d));
  }
  // Random orthogonal matrix via Procrustes-free Gram-Schmidt.
  bpq::Rotation q{dim, std::vector<float>(dim * dim)};
  std::vector<double> basis(dim * dim);
  for (std::size_t a = 0; a < dim; ++a) {
    double* v = basis.data() + a * dim;
    for (std::size_t d = 0; d < dim; ++d) v[d] = normal(rng);
    for (std::size_t b = 0; b < a; ++b) {
      const double* u = basis.data() + b * dim;
      double p = 0.0;
      for (std::size_t d = 0; d < dim; ++d) p += v[d] * u[d];
      for (std::size_t d = 0; d < dim; ++d) v[d] -= p * u[d];
    }
    double nn = 0.0;
    for (std::size_t d = 0; d < dim; ++d) nn += v[d] * v[d];
    nn = std::sqrt(nn);
    for (std::size_t d = 0; d < dim; ++d) {
      v[d] /= nn;
      q.matrix[a * dim + d] = float(v[d]);
    }
  }
  if (mixing) *mixing = q;
  return q.apply_all(raw);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("bpq_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
