#pragma once

// Codebook learning and product quantization: k-means with k-means++
// seeding, vector quantization, PQ encode/decode, lookup-table asymmetric
// distances, and OPQ (orthogonal pre-rotation learned by alternating
// Procrustes and Lloyd steps).

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bpq/common.hpp"
#include "bpq/vecio.hpp"

namespace bpq {

/// K' centroids of dimension d, row-major.
class Codebook {
 public:
  Codebook() = default;
  Codebook(std::size_t size, std::size_t dim) : size_(size), dim_(dim), data_(size * dim, 0.0f) {
    if (size == 0 || dim == 0) throw Error(ErrorKind::dimension, "codebook size and dimension must be positive");
  }
  Codebook(std::size_t dim, std::vector<float> centroids) : dim_(dim), data_(std::move(centroids)) {
    if (dim == 0 || data_.empty() || data_.size() % dim != 0) {
      throw Error(ErrorKind::dimension, "codebook data is not a positive multiple of its dimension");
    }
    size_ = data_.size() / dim;
  }

  std::size_t size() const { return size_; }
  std::size_t dim() const { return dim_; }
  const float* centroid(std::size_t k) const { return data_.data() + k * dim_; }
  float* centroid(std::size_t k) { return data_.data() + k * dim_; }
  std::span<const float> row(std::size_t k) const { return {centroid(k), dim_}; }
  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  friend bool operator==(const Codebook&, const Codebook&) = default;

 private:
  std::size_t size_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

struct Assignment {
  std::uint32_t id = 0;
  float distance = 0.0f;
};

// Nearest centroid without dimension checks; ties go to the lowest id.
inline Assignment nearest_centroid(const Codebook& book, const float* x) {
  Assignment best{0, std::numeric_limits<float>::infinity()};
  for (std::size_t k = 0; k < book.size(); ++k) {
    const float d = l2_sqr(x, book.centroid(k), book.dim());
    if (d < best.distance) best = {static_cast<std::uint32_t>(k), d};
  }
  return best;
}

inline std::uint32_t vq_assign(const Codebook& book, std::span<const float> x) {
  check_dim(x.size(), book.dim(), "vq_assign");
  return nearest_centroid(book, x.data()).id;
}

struct KMeansOptions {
  std::size_t max_iters = 25;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double tolerance = 1e-5;  // stop when the relative objective drop falls below this
};

struct KMeansResult {
  Codebook book;
  std::vector<double> objective;  // after every assignment pass
  std::vector<std::uint32_t> assignment;
};

namespace detail {

inline Codebook kmeanspp_seed(const DenseVectorSet& points, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = points.count();
  const std::size_t d = points.dim();
  Codebook book(k, d);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::copy_n(points.ptr(pick(rng)), d, book.centroid(0));
  std::vector<float> closest(n);
  for (std::size_t i = 0; i < n; ++i) closest[i] = l2_sqr(points.ptr(i), book.centroid(0), d);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (float v : closest) total += v;
    std::size_t chosen = 0;
    if (total <= 0.0) {
      chosen = pick(rng);
    } else {
      double target = unit(rng) * total;
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        target -= closest[i];
        if (target < 0.0) {
          chosen = i;
          break;
        }
      }
    }
    std::copy_n(points.ptr(chosen), d, book.centroid(c));
    for (std::size_t i = 0; i < n; ++i) {
      closest[i] = std::min(closest[i], l2_sqr(points.ptr(i), book.centroid(c), d));
    }
  }
  return book;
}

inline double assign_all(const DenseVectorSet& points, const Codebook& book, std::vector<std::uint32_t>& ids,
                         std::vector<float>& dists, unsigned threads) {
  parallel_for(points.count(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto a = nearest_centroid(book, points.ptr(i));
      ids[i] = a.id;
      dists[i] = a.distance;
    }
  });
  double objective = 0.0;
  for (float v : dists) objective += v;
  return objective;
}

// Lloyd update; an empty centroid is moved onto the point with the largest
// residual (each such point is used at most once).
inline void update_centroids(const DenseVectorSet& points, Codebook& book, const std::vector<std::uint32_t>& ids,
                             std::vector<float> dists) {
  const std::size_t d = points.dim();
  std::vector<double> sums(book.size() * d, 0.0);
  std::vector<std::size_t> counts(book.size(), 0);
  for (std::size_t i = 0; i < points.count(); ++i) {
    double* s = sums.data() + std::size_t(ids[i]) * d;
    const float* p = points.ptr(i);
    for (std::size_t c = 0; c < d; ++c) s[c] += p[c];
    ++counts[ids[i]];
  }
  for (std::size_t k = 0; k < book.size(); ++k) {
    if (counts[k] == 0) continue;
    float* dst = book.centroid(k);
    const double* s = sums.data() + k * d;
    for (std::size_t c = 0; c < d; ++c) dst[c] = static_cast<float>(s[c] / double(counts[k]));
  }
  for (std::size_t k = 0; k < book.size(); ++k) {
    if (counts[k] != 0) continue;
    std::size_t far = 0;
    for (std::size_t i = 1; i < dists.size(); ++i) {
      if (dists[i] > dists[far]) far = i;
    }
    if (dists.empty() || dists[far] <= 0.0f) break;
    std::copy_n(points.ptr(far), d, book.centroid(k));
    dists[far] = 0.0f;
  }
}

}  // namespace detail

/// Lloyd's algorithm from either k-means++ seeding or caller-supplied
/// centroids. Objective is recorded after every assignment pass.
inline KMeansResult kmeans_run(const DenseVectorSet& points, std::size_t k, const KMeansOptions& opts,
                               const Codebook* init = nullptr) {
  if (points.count() == 0) throw Error(ErrorKind::empty, "k-means on an empty point set");
  if (k == 0) throw Error(ErrorKind::config, "k-means needs k >= 1");
  KMeansResult res;
  if (init) {
    if (init->size() != k || init->dim() != points.dim()) {
      throw Error(ErrorKind::dimension, "initial codebook shape does not match k-means problem");
    }
    res.book = *init;
  } else {
    std::mt19937_64 rng(opts.seed);
    res.book = detail::kmeanspp_seed(points, k, rng);
  }
  const std::size_t n = points.count();
  res.assignment.assign(n, 0);
  std::vector<float> dists(n);
  double obj = detail::assign_all(points, res.book, res.assignment, dists, opts.threads);
  res.objective.push_back(obj);
  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    if (obj <= 0.0) break;
    detail::update_centroids(points, res.book, res.assignment, dists);
    const double next = detail::assign_all(points, res.book, res.assignment, dists, opts.threads);
    res.objective.push_back(next);
    const bool converged = (obj - next) < opts.tolerance * obj;
    obj = next;
    if (converged) break;
  }
  return res;
}

inline Codebook kmeans_train(const DenseVectorSet& points, std::size_t k, std::size_t max_iters, std::uint64_t seed,
                             unsigned threads = 1) {
  return kmeans_run(points, k, KMeansOptions{max_iters, seed, threads}).book;
}

using PqCode = std::vector<std::uint32_t>;

/// M codebooks of equal size K over consecutive D/M-dimensional slices.
class PqCodec {
 public:
  PqCodec() = default;
  explicit PqCodec(std::vector<Codebook> books) : books_(std::move(books)) {
    if (books_.empty()) throw Error(ErrorKind::config, "PQ codec needs at least one part");
    for (const auto& b : books_) {
      if (b.size() != books_[0].size() || b.dim() != books_[0].dim()) {
        throw Error(ErrorKind::dimension, "PQ codebooks must share size and dimension");
      }
    }
  }

  std::size_t num_parts() const { return books_.size(); }
  std::size_t sub_dim() const { return books_.empty() ? 0 : books_[0].dim(); }
  std::size_t size() const { return books_.empty() ? 0 : books_[0].size(); }
  std::size_t dim() const { return num_parts() * sub_dim(); }
  const Codebook& book(std::size_t m) const { return books_[m]; }
  Codebook& book(std::size_t m) { return books_[m]; }
  const std::vector<Codebook>& books() const { return books_; }

  friend bool operator==(const PqCodec&, const PqCodec&) = default;

 private:
  std::vector<Codebook> books_;
};

inline PqCodec pq_train(const DenseVectorSet& points, std::size_t m, std::size_t k, std::size_t max_iters,
                        std::uint64_t seed, unsigned threads = 1) {
  if (m == 0 || points.dim() % m != 0) {
    throw Error(ErrorKind::dimension, "dimension " + std::to_string(points.dim()) + " not divisible by m=" +
                                          std::to_string(m));
  }
  const std::size_t sub = points.dim() / m;
  std::vector<Codebook> books;
  books.reserve(m);
  for (std::size_t part = 0; part < m; ++part) {
    const auto slice = points.slice_columns(part * sub, sub);
    books.push_back(kmeans_train(slice, k, max_iters, seed + part, threads));
  }
  return PqCodec(std::move(books));
}

// Raw-pointer encoder shared by the index builders; codes must fit a byte.
inline void pq_encode_bytes(const PqCodec& codec, const float* x, std::uint8_t* out) {
  const std::size_t sub = codec.sub_dim();
  for (std::size_t m = 0; m < codec.num_parts(); ++m) {
    out[m] = static_cast<std::uint8_t>(nearest_centroid(codec.book(m), x + m * sub).id);
  }
}

inline PqCode pq_encode(const PqCodec& codec, std::span<const float> x) {
  check_dim(x.size(), codec.dim(), "pq_encode");
  PqCode code(codec.num_parts());
  for (std::size_t m = 0; m < codec.num_parts(); ++m) {
    code[m] = nearest_centroid(codec.book(m), x.data() + m * codec.sub_dim()).id;
  }
  return code;
}

inline void check_code(const PqCodec& codec, std::span<const std::uint32_t> code) {
  if (code.size() != codec.num_parts()) {
    throw Error(ErrorKind::range, "code has " + std::to_string(code.size()) + " parts, codec has " +
                                      std::to_string(codec.num_parts()));
  }
  for (std::size_t m = 0; m < code.size(); ++m) {
    if (code[m] >= codec.size()) {
      throw Error(ErrorKind::range, "code index " + std::to_string(code[m]) + " out of range in part " +
                                        std::to_string(m));
    }
  }
}

inline std::vector<float> pq_decode(const PqCodec& codec, std::span<const std::uint32_t> code) {
  check_code(codec, code);
  std::vector<float> out(codec.dim());
  for (std::size_t m = 0; m < codec.num_parts(); ++m) {
    std::copy_n(codec.book(m).centroid(code[m]), codec.sub_dim(), out.data() + m * codec.sub_dim());
  }
  return out;
}

/// Squared distances from each query subvector to every codeword.
struct AdcTable {
  std::size_t num_parts = 0;
  std::size_t size = 0;
  std::vector<float> entries;  // num_parts * size

  float at(std::size_t m, std::size_t k) const { return entries[m * size + k]; }
};

inline AdcTable adc_build(const PqCodec& codec, std::span<const float> q) {
  check_dim(q.size(), codec.dim(), "adc_build");
  AdcTable t{codec.num_parts(), codec.size(), std::vector<float>(codec.num_parts() * codec.size())};
  for (std::size_t m = 0; m < codec.num_parts(); ++m) {
    const float* qm = q.data() + m * codec.sub_dim();
    for (std::size_t k = 0; k < codec.size(); ++k) {
      t.entries[m * t.size + k] = l2_sqr(qm, codec.book(m).centroid(k), codec.sub_dim());
    }
  }
  return t;
}

inline float adc_distance(const AdcTable& table, std::span<const std::uint32_t> code) {
  if (code.size() != table.num_parts) throw Error(ErrorKind::range, "code length does not match ADC table");
  float acc = 0.0f;
  for (std::size_t m = 0; m < table.num_parts; ++m) {
    if (code[m] >= table.size) throw Error(ErrorKind::range, "code index out of range in part " + std::to_string(m));
    acc += table.entries[m * table.size + code[m]];
  }
  return acc;
}

/// Square orthogonal matrix, row-major; apply() computes R x.
struct Rotation {
  std::size_t dim = 0;
  std::vector<float> matrix;

  static Rotation identity(std::size_t d) {
    Rotation r{d, std::vector<float>(d * d, 0.0f)};
    for (std::size_t i = 0; i < d; ++i) r.matrix[i * d + i] = 1.0f;
    return r;
  }

  void apply(const float* x, float* out) const {
    for (std::size_t i = 0; i < dim; ++i) out[i] = bpq::dot(matrix.data() + i * dim, x, dim);
  }

  // R^T x
  void apply_inverse(const float* x, float* out) const {
    std::fill_n(out, dim, 0.0f);
    for (std::size_t i = 0; i < dim; ++i) {
      const float xi = x[i];
      const float* row = matrix.data() + i * dim;
      for (std::size_t j = 0; j < dim; ++j) out[j] += row[j] * xi;
    }
  }

  std::vector<float> apply(std::span<const float> x) const {
    check_dim(x.size(), dim, "rotation");
    std::vector<float> out(dim);
    apply(x.data(), out.data());
    return out;
  }

  std::vector<float> apply_inverse(std::span<const float> x) const {
    check_dim(x.size(), dim, "rotation");
    std::vector<float> out(dim);
    apply_inverse(x.data(), out.data());
    return out;
  }

  DenseVectorSet apply_all(const DenseVectorSet& set) const {
    check_dim(set.dim(), dim, "rotation");
    DenseVectorSet out(dim, set.count());
    for (std::size_t i = 0; i < set.count(); ++i) apply(set.ptr(i), out.ptr(i));
    return out;
  }

  // max |R^T R - I|
  double orthogonality_error() const {
    double worst = 0.0;
    for (std::size_t a = 0; a < dim; ++a) {
      for (std::size_t b = 0; b < dim; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < dim; ++i) s += double(matrix[i * dim + a]) * double(matrix[i * dim + b]);
        worst = std::max(worst, std::abs(s - (a == b ? 1.0 : 0.0)));
      }
    }
    return worst;
  }

  friend bool operator==(const Rotation&, const Rotation&) = default;
};

struct OpqOptions {
  std::size_t outer_iters = 20;
  std::size_t kmeans_iters = 25;  // for the initial PQ
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct OpqResult {
  Rotation rotation;
  PqCodec codec;
  std::vector<double> errors;  // mean squared error; [0] is the initial PQ
};

namespace detail {

// Orthogonal R minimizing sum ||R x_i - y_i||^2: with A = sum y_i x_i^T = U S V^T,
// R = U V^T.
inline Rotation procrustes(const DenseVectorSet& x, const DenseVectorSet& y) {
  const std::size_t d = x.dim();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < x.count(); ++i) {
    const Eigen::Map<const Eigen::VectorXf> xv(x.ptr(i), static_cast<Eigen::Index>(d));
    const Eigen::Map<const Eigen::VectorXf> yv(y.ptr(i), static_cast<Eigen::Index>(d));
    a.noalias() += yv.cast<double>() * xv.cast<double>().transpose();
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::MatrixXd r = svd.matrixU() * svd.matrixV().transpose();
  Rotation out{d, std::vector<float>(d * d)};
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out.matrix[i * d + j] = static_cast<float>(r(Eigen::Index(i), Eigen::Index(j)));
    }
  }
  return out;
}

}  // namespace detail

/// Non-parametric OPQ. Starts at identity with plain pq_train; each outer
/// iteration solves Procrustes against the current reconstructions, then
/// runs one Lloyd round per part on the rotated data.
inline OpqResult opq_train(const DenseVectorSet& points, std::size_t m, std::size_t k, const OpqOptions& opts) {
  if (points.count() == 0) throw Error(ErrorKind::empty, "OPQ on an empty point set");
  if (m == 0 || points.dim() % m != 0) {
    throw Error(ErrorKind::dimension, "dimension " + std::to_string(points.dim()) + " not divisible by m=" +
                                          std::to_string(m));
  }
  const std::size_t n = points.count();
  const std::size_t d = points.dim();
  const std::size_t sub = d / m;
  OpqResult res;
  res.rotation = Rotation::identity(d);
  res.codec = pq_train(points, m, k, opts.kmeans_iters, opts.seed, opts.threads);

  // Current codes per part, from the state left by the initial PQ.
  std::vector<std::vector<std::uint32_t>> codes(m, std::vector<std::uint32_t>(n));
  double total = 0.0;
  for (std::size_t part = 0; part < m; ++part) {
    const auto slice = points.slice_columns(part * sub, sub);
    std::vector<float> dists(n);
    total += detail::assign_all(slice, res.codec.book(part), codes[part], dists, opts.threads);
  }
  res.errors.push_back(total / double(n));

  DenseVectorSet recon(d, n);
  for (std::size_t it = 0; it < opts.outer_iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t part = 0; part < m; ++part) {
        std::copy_n(res.codec.book(part).centroid(codes[part][i]), sub, recon.ptr(i) + part * sub);
      }
    }
    res.rotation = detail::procrustes(points, recon);
    const auto rotated = res.rotation.apply_all(points);
    total = 0.0;
    for (std::size_t part = 0; part < m; ++part) {
      const auto slice = rotated.slice_columns(part * sub, sub);
      auto step = kmeans_run(slice, k, KMeansOptions{1, opts.seed + part, opts.threads, 0.0}, &res.codec.book(part));
      total += step.objective.back();
      res.codec.book(part) = std::move(step.book);
      codes[part] = std::move(step.assignment);
    }
    res.errors.push_back(total / double(n));
  }
  return res;
}

inline OpqResult opq_train(const DenseVectorSet& points, std::size_t m, std::size_t k, std::size_t outer_iters,
                           std::uint64_t seed) {
  OpqOptions opts;
  opts.outer_iters = outer_iters;
  opts.seed = seed;
  return opq_train(points, m, k, opts);
}

/// Mean squared PQ reconstruction error of a set under a codec.
inline double pq_mse(const PqCodec& codec, const DenseVectorSet& points) {
  check_dim(points.dim(), codec.dim(), "pq_mse");
  if (points.count() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < points.count(); ++i) {
    for (std::size_t m = 0; m < codec.num_parts(); ++m) {
      total += nearest_centroid(codec.book(m), points.ptr(i) + m * codec.sub_dim()).distance;
    }
  }
  return total / double(points.count());
}

}  // namespace bpq
