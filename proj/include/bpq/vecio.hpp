#pragma once

// Dense vector sets, texmex-format file I/O (.fvecs / .bvecs / .ivecs),
// synthetic data generators and the exact k-NN oracle used for ground truth.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bpq/common.hpp"
#include "bpq/serialize.hpp"

namespace bpq {

/// Row-major collection of single-precision vectors of one dimension.
class DenseVectorSet {
 public:
  DenseVectorSet() = default;

  DenseVectorSet(std::size_t dim, std::size_t count) : dim_(dim), data_(dim * count, 0.0f) {
    if (dim == 0) throw Error(ErrorKind::dimension, "vector dimension must be positive");
  }

  DenseVectorSet(std::size_t dim, std::vector<float> data) : dim_(dim), data_(std::move(data)) {
    if (dim == 0) throw Error(ErrorKind::dimension, "vector dimension must be positive");
    if (data_.size() % dim != 0) {
      throw Error(ErrorKind::dimension, "data length " + std::to_string(data_.size()) +
                                            " is not a multiple of dimension " + std::to_string(dim));
    }
  }

  std::size_t dim() const { return dim_; }
  std::size_t count() const { return dim_ ? data_.size() / dim_ : 0; }
  bool empty() const { return data_.empty(); }

  const float* ptr(std::size_t i) const { return data_.data() + i * dim_; }
  float* ptr(std::size_t i) { return data_.data() + i * dim_; }
  std::span<const float> row(std::size_t i) const { return {ptr(i), dim_}; }
  std::span<float> row(std::size_t i) { return {ptr(i), dim_}; }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  void push_back(std::span<const float> v) {
    check_dim(v.size(), dim_, "push_back");
    data_.insert(data_.end(), v.begin(), v.end());
  }

  // Copies columns [offset, offset + width) of every row.
  DenseVectorSet slice_columns(std::size_t offset, std::size_t width) const {
    DenseVectorSet out(width, count());
    for (std::size_t i = 0; i < count(); ++i) {
      std::copy_n(ptr(i) + offset, width, out.ptr(i));
    }
    return out;
  }

  DenseVectorSet head(std::size_t n) const {
    n = std::min(n, count());
    return DenseVectorSet(dim_, std::vector<float>(data_.begin(), data_.begin() + n * dim_));
  }

  friend bool operator==(const DenseVectorSet&, const DenseVectorSet&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

/// Exact k nearest neighbors per query, ascending by squared distance.
struct GroundTruth {
  std::size_t k = 0;
  std::vector<std::uint32_t> ids;  // num_queries * k
  std::vector<float> distances;    // same shape; empty when loaded from .ivecs

  std::size_t num_queries() const { return k ? ids.size() / k : 0; }
  std::span<const std::uint32_t> ids_of(std::size_t q) const { return {ids.data() + q * k, k}; }
  std::span<const float> distances_of(std::size_t q) const { return {distances.data() + q * k, k}; }
  std::uint32_t nearest(std::size_t q) const { return ids[q * k]; }
};

enum class VecFormat { f32, u8, i32 };

inline const char* to_string(VecFormat f) {
  switch (f) {
    case VecFormat::f32: return "f32-vec";
    case VecFormat::u8: return "u8-vec";
    case VecFormat::i32: return "i32-vec";
  }
  return "?";
}

inline VecFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".fvecs") return VecFormat::f32;
  if (ext == ".bvecs") return VecFormat::u8;
  if (ext == ".ivecs") return VecFormat::i32;
  throw Error(ErrorKind::config, "cannot infer vector format from extension of " + path.string());
}

inline std::size_t component_bytes(VecFormat f) { return f == VecFormat::u8 ? 1 : 4; }

/// Parses texmex records: a 4-byte little-endian dimension, then the
/// components. Every record must repeat the first record's dimension.
inline DenseVectorSet parse_vectors(std::span<const std::uint8_t> bytes, VecFormat format,
                                    std::optional<std::size_t> limit = std::nullopt) {
  if (bytes.empty()) throw Error(ErrorKind::empty, "empty input");
  const std::size_t width = component_bytes(format);
  std::size_t pos = 0;
  std::size_t dim = 0;
  std::vector<float> data;
  std::size_t record = 0;
  while (pos < bytes.size() && (!limit || record < *limit)) {
    if (bytes.size() - pos < 4) {
      throw Error(ErrorKind::format, "truncated record header at byte offset " + std::to_string(pos));
    }
    const auto d = load_le<std::int32_t>(bytes.data() + pos);
    if (record == 0) {
      if (d <= 0) throw Error(ErrorKind::format, "non-positive dimension in record 0");
      dim = static_cast<std::size_t>(d);
      if (limit) data.reserve(dim * *limit);
    } else if (d < 0 || static_cast<std::size_t>(d) != dim) {
      throw Error(ErrorKind::format, "inconsistent dimension " + std::to_string(d) + " in record " +
                                         std::to_string(record) + " (expected " + std::to_string(dim) +
                                         ")");
    }
    pos += 4;
    const std::size_t body = dim * width;
    if (bytes.size() - pos < body) {
      throw Error(ErrorKind::format, "truncated record " + std::to_string(record) + " at byte offset " +
                                         std::to_string(pos - 4));
    }
    const std::uint8_t* p = bytes.data() + pos;
    for (std::size_t c = 0; c < dim; ++c) {
      float v = 0.0f;
      switch (format) {
        case VecFormat::f32: v = load_le<float>(p + 4 * c); break;
        case VecFormat::u8: v = static_cast<float>(p[c]); break;
        case VecFormat::i32: v = static_cast<float>(load_le<std::int32_t>(p + 4 * c)); break;
      }
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::format, "non-finite component in record " + std::to_string(record));
      }
      data.push_back(v);
    }
    pos += body;
    ++record;
  }
  return DenseVectorSet(dim, std::move(data));
}

inline DenseVectorSet read_vectors(const std::filesystem::path& path, VecFormat format,
                                   std::optional<std::size_t> limit = std::nullopt) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::io, "no such file: " + path.string());
  return parse_vectors(read_file_bytes(path), format, limit);
}

inline DenseVectorSet read_vectors(const std::filesystem::path& path,
                                   std::optional<std::size_t> limit = std::nullopt) {
  return read_vectors(path, format_from_path(path), limit);
}

inline std::vector<std::uint8_t> serialize_vectors(const DenseVectorSet& set, VecFormat format) {
  if (set.count() == 0) throw Error(ErrorKind::empty, "empty input");
  ByteWriter w;
  const auto dim = static_cast<std::int32_t>(set.dim());
  for (std::size_t i = 0; i < set.count(); ++i) {
    w.put<std::int32_t>(dim);
    const float* row = set.ptr(i);
    switch (format) {
      case VecFormat::f32:
        w.put_array(std::span<const float>(row, set.dim()));
        break;
      case VecFormat::u8:
        for (std::size_t c = 0; c < set.dim(); ++c) {
          const float v = row[c];
          if (!(v >= 0.0f && v <= 255.0f) || v != std::floor(v)) {
            throw Error(ErrorKind::range, "value " + std::to_string(v) + " in record " + std::to_string(i) +
                                              " does not fit u8-vec");
          }
          w.put<std::uint8_t>(static_cast<std::uint8_t>(v));
        }
        break;
      case VecFormat::i32:
        for (std::size_t c = 0; c < set.dim(); ++c) {
          const float v = row[c];
          if (v != std::floor(v) || v < -2147483648.0f || v >= 2147483648.0f) {
            throw Error(ErrorKind::range, "value " + std::to_string(v) + " in record " + std::to_string(i) +
                                              " does not fit i32-vec");
          }
          w.put<std::int32_t>(static_cast<std::int32_t>(v));
        }
        break;
    }
  }
  return w.take();
}

inline void write_vectors(const DenseVectorSet& set, const std::filesystem::path& path, VecFormat format) {
  const auto bytes = serialize_vectors(set, format);
  write_file_atomic(path, bytes);
}

inline void write_vectors(const DenseVectorSet& set, const std::filesystem::path& path) {
  write_vectors(set, path, format_from_path(path));
}

// Ground truth in .ivecs form: one record of k ids per query.
inline void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
  if (gt.num_queries() == 0) throw Error(ErrorKind::empty, "empty input");
  ByteWriter w;
  for (std::size_t q = 0; q < gt.num_queries(); ++q) {
    w.put<std::int32_t>(static_cast<std::int32_t>(gt.k));
    for (auto id : gt.ids_of(q)) w.put<std::int32_t>(static_cast<std::int32_t>(id));
  }
  write_file_atomic(path, w.bytes());
}

inline GroundTruth read_ground_truth(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::io, "no such file: " + path.string());
  const auto bytes = read_file_bytes(path);
  if (bytes.empty()) throw Error(ErrorKind::empty, "empty input");
  GroundTruth gt;
  ByteReader r(bytes);
  std::size_t record = 0;
  while (r.remaining() > 0) {
    const auto k = r.get<std::int32_t>();
    if (k <= 0 || (record > 0 && static_cast<std::size_t>(k) != gt.k)) {
      throw Error(ErrorKind::format, "inconsistent dimension in record " + std::to_string(record));
    }
    gt.k = static_cast<std::size_t>(k);
    for (std::int32_t c = 0; c < k; ++c) {
      const auto id = r.get<std::int32_t>();
      if (id < 0) throw Error(ErrorKind::format, "negative id in record " + std::to_string(record));
      gt.ids.push_back(static_cast<std::uint32_t>(id));
    }
    ++record;
  }
  return gt;
}

/// Isotropic Gaussian blobs: centers uniform in [0,1]^dim, points normal
/// around their center with standard deviation `spread`. Points are emitted
/// cluster by cluster.
inline DenseVectorSet generate_clustered(std::size_t num_clusters, std::size_t per_cluster, std::size_t dim,
                                         float spread, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> uniform(0.0f, 1.0f);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  DenseVectorSet out(dim, num_clusters * per_cluster);
  std::vector<float> center(dim);
  for (std::size_t c = 0; c < num_clusters; ++c) {
    for (auto& v : center) v = uniform(rng);
    for (std::size_t p = 0; p < per_cluster; ++p) {
      float* row = out.ptr(c * per_cluster + p);
      for (std::size_t d = 0; d < dim; ++d) {
        row[d] = spread > 0.0f ? center[d] + spread * normal(rng) : center[d];
      }
    }
  }
  return out;
}

/// Mixture of anisotropic Gaussian clusters. Each cluster lives mostly in its
/// own random low-dimensional subspace with a geometrically decaying
/// spectrum, plus a small isotropic noise floor. Sampling is repeatable, so
/// learn/base/query sets can be drawn from one model with different seeds.
class ClusterMixture {
 public:
  ClusterMixture(std::size_t num_clusters, std::size_t dim, std::size_t intrinsic_dim, float spread, float decay,
                 float noise, std::uint64_t seed)
      : dim_(dim), rank_(std::min(intrinsic_dim, dim)), noise_(noise) {
    if (num_clusters == 0 || dim == 0) throw Error(ErrorKind::config, "mixture needs clusters and dimension");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> uniform(0.0f, 1.0f);
    std::normal_distribution<double> normal(0.0, 1.0);
    centers_.resize(num_clusters * dim);
    for (auto& v : centers_) v = uniform(rng);
    bases_.resize(num_clusters * rank_ * dim);
    scales_.resize(num_clusters * rank_);
    std::vector<double> basis(rank_ * dim);
    for (std::size_t c = 0; c < num_clusters; ++c) {
      // Gram-Schmidt on Gaussian rows gives a random orthonormal frame.
      for (std::size_t a = 0; a < rank_; ++a) {
        double* v = basis.data() + a * dim;
        for (std::size_t d = 0; d < dim; ++d) v[d] = normal(rng);
        for (std::size_t b = 0; b < a; ++b) {
          const double* u = basis.data() + b * dim;
          double proj = 0.0;
          for (std::size_t d = 0; d < dim; ++d) proj += v[d] * u[d];
          for (std::size_t d = 0; d < dim; ++d) v[d] -= proj * u[d];
        }
        double n = 0.0;
        for (std::size_t d = 0; d < dim; ++d) n += v[d] * v[d];
        n = std::sqrt(n);
        for (std::size_t d = 0; d < dim; ++d) {
          v[d] /= n;
          bases_[(c * rank_ + a) * dim + d] = static_cast<float>(v[d]);
        }
      }
      const float cluster_scale = spread * (0.5f + uniform(rng));
      float s = cluster_scale;
      for (std::size_t a = 0; a < rank_; ++a) {
        scales_[c * rank_ + a] = s;
        s *= decay;
      }
    }
  }

  std::size_t dim() const { return dim_; }
  std::size_t num_clusters() const { return centers_.size() / dim_; }
  std::span<const float> center(std::size_t c) const { return {centers_.data() + c * dim_, dim_}; }

  DenseVectorSet sample(std::size_t n, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, num_clusters() - 1);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    DenseVectorSet out(dim_, n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = pick(rng);
      float* row = out.ptr(i);
      std::copy_n(centers_.data() + c * dim_, dim_, row);
      for (std::size_t a = 0; a < rank_; ++a) {
        const float z = scales_[c * rank_ + a] * normal(rng);
        const float* axis = bases_.data() + (c * rank_ + a) * dim_;
        for (std::size_t d = 0; d < dim_; ++d) row[d] += z * axis[d];
      }
      if (noise_ > 0.0f) {
        for (std::size_t d = 0; d < dim_; ++d) row[d] += noise_ * normal(rng);
      }
    }
    return out;
  }

 private:
  std::size_t dim_;
  std::size_t rank_;
  float noise_;
  std::vector<float> centers_;
  std::vector<float> bases_;
  std::vector<float> scales_;
};

/// Exact squared-L2 k-NN, ties broken by smaller id. Parallel over queries;
/// each query is computed independently so the result is thread-count
/// invariant.
inline GroundTruth brute_force_knn(const DenseVectorSet& base, const DenseVectorSet& queries, std::size_t k,
                                   unsigned threads = 1) {
  check_dim(queries.dim(), base.dim(), "brute_force_knn");
  if (k == 0 || k > base.count()) {
    throw Error(ErrorKind::range, "k=" + std::to_string(k) + " must be in [1, " + std::to_string(base.count()) +
                                      "]");
  }
  GroundTruth gt;
  gt.k = k;
  gt.ids.resize(queries.count() * k);
  gt.distances.resize(queries.count() * k);
  parallel_for(queries.count(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<Neighbor> all(base.count());
    for (std::size_t q = begin; q < end; ++q) {
      for (std::size_t i = 0; i < base.count(); ++i) {
        all[i] = {static_cast<std::uint32_t>(i), l2_sqr(queries.ptr(q), base.ptr(i), base.dim())};
      }
      std::partial_sort(all.begin(), all.begin() + k, all.end(), neighbor_less);
      for (std::size_t r = 0; r < k; ++r) {
        gt.ids[q * k + r] = all[r].id;
        gt.distances[q * k + r] = all[r].distance;
      }
    }
  });
  return gt;
}

}  // namespace bpq
