#pragma once

// Hierarchical bilayer PQ: displacement halves are encoded with codebooks
// local to the coarse codeword of that half. Cell (i, j) uses books1[i] for
// the first half and books2[j] for the second, so the bank grows with T, not
// with the T*T cells.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bpq/common.hpp"
#include "bpq/multi_index.hpp"
#include "bpq/quantizer.hpp"

namespace bpq {

class LocalCodebookBank {
 public:
  LocalCodebookBank() = default;
  LocalCodebookBank(std::size_t t, std::size_t half_parts, std::vector<Codebook> books,
                    std::optional<Rotation> rot1 = std::nullopt, std::optional<Rotation> rot2 = std::nullopt)
      : t_(t), half_parts_(half_parts), books_(std::move(books)), rot1_(std::move(rot1)), rot2_(std::move(rot2)) {
    if (t_ == 0 || half_parts_ == 0 || books_.size() != 2 * t_ * half_parts_) {
      throw Error(ErrorKind::dimension, "local bank must hold 2*T*(M/2) codebooks");
    }
    for (const auto& b : books_) {
      if (b.size() != books_[0].size() || b.dim() != books_[0].dim()) {
        throw Error(ErrorKind::dimension, "local codebooks must share size and dimension");
      }
    }
    if (rot1_.has_value() != rot2_.has_value()) throw Error(ErrorKind::config, "per-half rotations come in pairs");
    if (rot1_ && (rot1_->dim != half_dim() || rot2_->dim != half_dim())) {
      throw Error(ErrorKind::dimension, "per-half rotation dimension mismatch");
    }
  }

  std::size_t t() const { return t_; }
  std::size_t half_parts() const { return half_parts_; }
  std::size_t num_parts() const { return 2 * half_parts_; }
  std::size_t k() const { return books_.empty() ? 0 : books_[0].size(); }
  std::size_t sub_dim() const { return books_.empty() ? 0 : books_[0].dim(); }
  std::size_t half_dim() const { return half_parts_ * sub_dim(); }
  std::size_t dim() const { return 2 * half_dim(); }

  // (half, cell, part) order.
  const Codebook& book(std::size_t half, std::size_t cell, std::size_t part) const {
    return books_[(half * t_ + cell) * half_parts_ + part];
  }
  const std::vector<Codebook>& books() const { return books_; }
  const std::optional<Rotation>& rotation(std::size_t half) const { return half == 0 ? rot1_ : rot2_; }
  bool rotated() const { return rot1_.has_value(); }

  // Stored centroid components; equals T*K*D.
  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& b : books_) n += b.size() * b.dim();
    return n;
  }

  friend bool operator==(const LocalCodebookBank&, const LocalCodebookBank&) = default;

 private:
  std::size_t t_ = 0;
  std::size_t half_parts_ = 0;
  std::vector<Codebook> books_;
  std::optional<Rotation> rot1_, rot2_;
};

struct LocalTrainOptions {
  std::size_t kmeans_iters = 25;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool optimized = false;  // learn one rotation per half on pooled displacements
  std::size_t opq_iters = 10;
  std::size_t refine_iters = 3;  // for sparse cells seeded from the global books
};

namespace detail {

inline std::uint64_t local_seed(std::uint64_t seed, std::size_t half, std::size_t cell, std::size_t part) {
  return seed * 1000003ull + (half * 0x9E3779B97F4A7C15ull) + cell * 8191ull + part * 131ull + 17ull;
}

inline std::vector<CellId> assign_cells(const CoarsePair& coarse, const DenseVectorSet& points, unsigned threads) {
  std::vector<CellId> out(points.count());
  parallel_for(points.count(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<float> buf;
    for (std::size_t p = begin; p < end; ++p) out[p] = assign_cell_prepared(coarse, coarse.prepare(points.ptr(p), buf));
  });
  return out;
}

}  // namespace detail

/// Learns books for every coarse codeword of each half on the displacements
/// of learn points that fall into it. `global` supplies the fallback for
/// sparse cells: with fewer than K points its half is copied verbatim, with
/// fewer than `min_points` it seeds a short refinement. When `opts.optimized`
/// is set, the fallback instead comes from the per-half OPQ codec.
inline LocalCodebookBank train_local_codebooks(const DenseVectorSet& learn, const CoarsePair& coarse, std::size_t m,
                                               std::size_t k, std::size_t min_points, const PqCodec& global,
                                               const LocalTrainOptions& opts = {}) {
  if (learn.count() == 0) throw Error(ErrorKind::empty, "empty learn set");
  check_dim(learn.dim(), coarse.dim(), "train_local_codebooks");
  if (m == 0 || m % 2 != 0 || learn.dim() % m != 0) {
    throw Error(ErrorKind::config, "HBPQ needs an even m dividing the dimension");
  }
  if (global.num_parts() != m || global.size() != k || global.dim() != learn.dim()) {
    throw Error(ErrorKind::dimension, "fallback codebooks do not match (m, k, D)");
  }
  const std::size_t t = coarse.size();
  const std::size_t hp = m / 2;
  const std::size_t hd = learn.dim() / 2;
  const std::size_t sub = learn.dim() / m;

  const auto cells = detail::assign_cells(coarse, learn, opts.threads);
  const auto disp = displacements(coarse, learn, opts.threads);

  std::vector<Codebook> books(2 * t * hp);
  std::optional<Rotation> rotations[2];
  for (std::size_t half = 0; half < 2; ++half) {
    auto pooled = disp.slice_columns(half * hd, hd);
    std::vector<Codebook> fallback;
    if (opts.optimized) {
      OpqOptions o;
      o.outer_iters = opts.opq_iters;
      o.kmeans_iters = opts.kmeans_iters;
      o.seed = opts.seed + 7 + half;
      o.threads = opts.threads;
      auto opq = opq_train(pooled, hp, k, o);
      pooled = opq.rotation.apply_all(pooled);
      rotations[half] = std::move(opq.rotation);
      fallback = opq.codec.books();
    } else {
      fallback.assign(global.books().begin() + half * hp, global.books().begin() + (half + 1) * hp);
    }

    std::vector<std::vector<std::uint32_t>> members(t);
    for (std::size_t p = 0; p < cells.size(); ++p) members[half == 0 ? cells[p].i : cells[p].j].push_back(std::uint32_t(p));

    parallel_for(t, opts.threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t c = begin; c < end; ++c) {
        const auto& rows = members[c];
        for (std::size_t part = 0; part < hp; ++part) {
          Codebook& dst = books[(half * t + c) * hp + part];
          if (rows.size() < k) {
            dst = fallback[part];
            continue;
          }
          DenseVectorSet local(sub, rows.size());
          for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(pooled.ptr(rows[r]) + part * sub, sub, local.ptr(r));
          if (rows.size() < min_points) {
            KMeansOptions ko{std::min(opts.refine_iters, opts.kmeans_iters), 0, 1};
            dst = kmeans_run(local, k, ko, &fallback[part]).book;
          } else {
            dst = kmeans_train(local, k, opts.kmeans_iters, detail::local_seed(opts.seed, half, c, part));
          }
        }
      }
    });
  }
  return LocalCodebookBank(t, hp, std::move(books), std::move(rotations[0]), std::move(rotations[1]));
}

// Encodes displacement `d` (coarse frame) of a point in cell (i, j).
inline void hbpq_encode_bytes(const LocalCodebookBank& bank, CellId cell, const float* d, std::uint8_t* out) {
  const std::size_t hd = bank.half_dim();
  const std::size_t sub = bank.sub_dim();
  std::vector<float> rotated(hd);
  for (std::size_t half = 0; half < 2; ++half) {
    const float* src = d + half * hd;
    if (const auto& rot = bank.rotation(half)) {
      rot->apply(src, rotated.data());
      src = rotated.data();
    }
    const std::size_t c = half == 0 ? cell.i : cell.j;
    for (std::size_t part = 0; part < bank.half_parts(); ++part) {
      out[half * bank.half_parts() + part] =
          static_cast<std::uint8_t>(nearest_centroid(bank.book(half, c, part), src + part * sub).id);
    }
  }
}

inline void check_cell(const LocalCodebookBank& bank, std::size_t i, std::size_t j) {
  if (i >= bank.t() || j >= bank.t()) {
    throw Error(ErrorKind::range, "cell (" + std::to_string(i) + ", " + std::to_string(j) + ") out of range");
  }
}

inline PqCode hbpq_encode(const LocalCodebookBank& bank, std::size_t i, std::size_t j,
                          std::span<const float> displacement) {
  check_cell(bank, i, j);
  check_dim(displacement.size(), bank.dim(), "hbpq_encode");
  std::vector<std::uint8_t> bytes(bank.num_parts());
  const CellId cell{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)};
  if (bank.k() <= 256) {
    hbpq_encode_bytes(bank, cell, displacement.data(), bytes.data());
    return PqCode(bytes.begin(), bytes.end());
  }
  PqCode code(bank.num_parts());
  const std::size_t hd = bank.half_dim();
  for (std::size_t half = 0; half < 2; ++half) {
    std::vector<float> src(displacement.begin() + half * hd, displacement.begin() + (half + 1) * hd);
    if (const auto& rot = bank.rotation(half)) src = rot->apply(src);
    for (std::size_t part = 0; part < bank.half_parts(); ++part) {
      code[half * bank.half_parts() + part] =
          nearest_centroid(bank.book(half, half == 0 ? i : j, part), src.data() + part * bank.sub_dim()).id;
    }
  }
  return code;
}

// Displacement reconstruction in the coarse frame.
inline std::vector<float> hbpq_decode(const LocalCodebookBank& bank, std::size_t i, std::size_t j,
                                      std::span<const std::uint32_t> code) {
  check_cell(bank, i, j);
  if (code.size() != bank.num_parts()) throw Error(ErrorKind::range, "code length does not match bank");
  const std::size_t hd = bank.half_dim();
  const std::size_t sub = bank.sub_dim();
  std::vector<float> out(bank.dim());
  for (std::size_t half = 0; half < 2; ++half) {
    std::vector<float> local(hd);
    for (std::size_t part = 0; part < bank.half_parts(); ++part) {
      const auto c = code[half * bank.half_parts() + part];
      if (c >= bank.k()) throw Error(ErrorKind::range, "code index out of range");
      std::copy_n(bank.book(half, half == 0 ? i : j, part).centroid(c), sub, local.data() + part * sub);
    }
    if (const auto& rot = bank.rotation(half)) local = rot->apply_inverse(local);
    std::copy(local.begin(), local.end(), out.begin() + half * hd);
  }
  return out;
}

class HbpqIndex {
 public:
  HbpqIndex() = default;
  HbpqIndex(IndexParams params, CoarsePair coarse, LocalCodebookBank bank, CellStore store)
      : params_(params), coarse_(std::move(coarse)), bank_(std::move(bank)), store_(std::move(store)) {
    validate();
    if (bank_.rotated()) {
      const std::size_t hd = params_.dim / 2;
      for (std::size_t half = 0; half < 2; ++half) {
        const Codebook& src = half == 0 ? coarse_.book1 : coarse_.book2;
        auto& dst = rotated_centroids_[half];
        dst.resize(params_.t * hd);
        for (std::size_t c = 0; c < params_.t; ++c) bank_.rotation(half)->apply(src.centroid(c), dst.data() + c * hd);
      }
    }
  }

  const IndexParams& params() const { return params_; }
  const CoarsePair& coarse() const { return coarse_; }
  const LocalCodebookBank& bank() const { return bank_; }
  const CellTable& cells() const { return store_.cells; }
  const CellStore& store() const { return store_; }
  std::size_t size() const { return store_.size(); }
  std::uint32_t id_at(std::size_t pos) const { return store_.ids[pos]; }
  const std::uint8_t* code_at(std::size_t pos) const { return store_.codes.data() + pos * params_.m; }
  std::size_t bytes_per_point() const { return sizeof(std::uint32_t) + params_.m; }

  // Coarse centroid of `half` in that half's fine frame (rotated when the
  // bank carries per-half rotations).
  const float* fine_frame_centroid(std::size_t half, std::size_t c) const {
    if (bank_.rotated()) return rotated_centroids_[half].data() + c * (params_.dim / 2);
    return (half == 0 ? coarse_.book1 : coarse_.book2).centroid(c);
  }

  friend bool operator==(const HbpqIndex& a, const HbpqIndex& b) {
    return a.params_ == b.params_ && a.coarse_ == b.coarse_ && a.bank_ == b.bank_ && a.store_ == b.store_;
  }

 private:
  void validate() const {
    validate_params(params_);
    coarse_.validate();
    if (coarse_.dim() != params_.dim || coarse_.size() != params_.t) {
      throw Error(ErrorKind::dimension, "coarse codebooks do not match index parameters");
    }
    if (bank_.t() != params_.t || bank_.num_parts() != params_.m || bank_.k() != params_.k ||
        bank_.dim() != params_.dim) {
      throw Error(ErrorKind::dimension, "local bank does not match index parameters");
    }
    if (store_.cells.t != params_.t || store_.cells.offsets.size() != params_.t * params_.t + 1 ||
        store_.cells.offsets.front() != 0 || store_.cells.total() != store_.ids.size() ||
        store_.codes.size() != store_.ids.size() * params_.m) {
      throw Error(ErrorKind::format, "cell table is inconsistent with stored entries");
    }
    for (std::size_t c = 0; c + 1 < store_.cells.offsets.size(); ++c) {
      if (store_.cells.offsets[c] > store_.cells.offsets[c + 1]) {
        throw Error(ErrorKind::format, "cell offsets are not non-decreasing");
      }
    }
    for (auto code : store_.codes) {
      if (code >= params_.k) throw Error(ErrorKind::range, "stored code index exceeds k");
    }
  }

  IndexParams params_;
  CoarsePair coarse_;
  LocalCodebookBank bank_;
  CellStore store_;
  std::vector<float> rotated_centroids_[2];
};

inline HbpqIndex build_hbpq_index(const DenseVectorSet& base, const CoarsePair& coarse, const LocalCodebookBank& bank,
                                  std::uint64_t id_offset = 0, unsigned threads = 1) {
  const IndexParams params{coarse.dim(), coarse.size(), bank.num_parts(), bank.k()};
  validate_params(params);
  auto store = build_cell_store(base, coarse, bank.num_parts(), id_offset, threads,
                                [&](CellId c, const float* disp, std::uint8_t* out) { hbpq_encode_bytes(bank, c, disp, out); });
  return HbpqIndex(params, coarse, bank, std::move(store));
}

template <typename Counter = NullCounter>
void rerank_hbpq(const HbpqIndex& index, const CoarseScan& scan, std::span<const VisitedCell> visited,
                 std::vector<Neighbor>& out, Counter& counter) {
  const auto& bank = index.bank();
  const std::size_t d = index.params().dim;
  const std::size_t hd = d / 2;
  const std::size_t hp = bank.half_parts();
  const std::size_t sub = bank.sub_dim();
  // Query halves in the fine frames.
  std::vector<float> fq(scan.query.begin(), scan.query.end());
  for (std::size_t half = 0; half < 2; ++half) {
    if (const auto& rot = bank.rotation(half)) rot->apply(scan.query.data() + half * hd, fq.data() + half * hd);
  }
  if constexpr (Counter::enabled) {
    if (bank.rotated()) counter.overhead(0, 2 * hd * hd);
  }
  std::vector<float> qdisp(d);
  std::vector<const float*> rows(2 * hp);
  for (const auto& v : visited) {
    const float* c1 = index.fine_frame_centroid(0, v.cell.i);
    const float* c2 = index.fine_frame_centroid(1, v.cell.j);
    for (std::size_t k = 0; k < hd; ++k) {
      qdisp[k] = fq[k] - c1[k];
      qdisp[hd + k] = fq[hd + k] - c2[k];
    }
    if constexpr (Counter::enabled) counter.overhead(2, d);
    for (std::uint64_t pos = v.begin; pos < v.end; ++pos) {
      const std::uint8_t* code = index.code_at(pos);
      float dist = 0.0f;
      for (std::size_t part = 0; part < hp; ++part) {
        dist += l2_sqr(qdisp.data() + part * sub, bank.book(0, v.cell.i, part).centroid(code[part]), sub);
      }
      for (std::size_t part = 0; part < hp; ++part) {
        dist += l2_sqr(qdisp.data() + hd + part * sub, bank.book(1, v.cell.j, part).centroid(code[hp + part]), sub);
      }
      if constexpr (Counter::enabled) counter.candidate(2 * hp, 3 * d);
      out.push_back({index.id_at(pos), dist});
    }
  }
}

template <typename Counter = NullCounter>
SearchResult search_hbpq(const HbpqIndex& index, std::span<const float> q, std::size_t l, std::size_t r,
                         Counter& counter) {
  check_budget(l, r);
  check_dim(q.size(), index.params().dim, "search_hbpq");
  SearchResult res;
  if (index.size() == 0) return res;
  const auto scan = scan_coarse(index.coarse(), q);
  const auto visited = collect_cells(index.cells(), scan, l);
  rerank_hbpq(index, scan, visited, res.neighbors, counter);
  res.candidates = res.neighbors.size();
  res.cells_visited = visited.size();
  keep_top(res.neighbors, r);
  return res;
}

inline SearchResult search_hbpq(const HbpqIndex& index, std::span<const float> q, std::size_t l, std::size_t r) {
  NullCounter c;
  return search_hbpq(index, q, l, r, c);
}

/// Reconstruction of stored entry `pos` in the original frame.
inline std::vector<float> reconstruct(const HbpqIndex& index, std::size_t pos, CellId cell) {
  const std::size_t m = index.params().m;
  PqCode code(index.code_at(pos), index.code_at(pos) + m);
  auto x = hbpq_decode(index.bank(), cell.i, cell.j, code);
  const std::size_t h = index.params().dim / 2;
  const float* c1 = index.coarse().book1.centroid(cell.i);
  const float* c2 = index.coarse().book2.centroid(cell.j);
  for (std::size_t k = 0; k < h; ++k) {
    x[k] += c1[k];
    x[h + k] += c2[k];
  }
  if (index.coarse().rotation) return index.coarse().rotation->apply_inverse(x);
  return x;
}

}  // namespace bpq
