#pragma once

// Second-order inverted multi-index with PQ-compressed displacements
// (Multi-D-ADC). Cells are the Cartesian product of two coarse codebooks over
// the vector halves; each stored point keeps an id and an M-byte PQ code of
// its displacement from the cell centroid.

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "bpq/common.hpp"
#include "bpq/multi_sequence.hpp"
#include "bpq/quantizer.hpp"
#include "bpq/vecio.hpp"

namespace bpq {

struct CoarsePair {
  Codebook book1;  // first halves
  Codebook book2;  // second halves
  std::optional<Rotation> rotation;

  std::size_t half_dim() const { return book1.dim(); }
  std::size_t dim() const { return 2 * book1.dim(); }
  std::size_t size() const { return book1.size(); }

  void validate() const {
    if (book1.dim() != book2.dim()) throw Error(ErrorKind::dimension, "coarse books differ in dimension");
    if (book1.size() != book2.size()) throw Error(ErrorKind::dimension, "coarse books differ in size");
    if (rotation && rotation->dim != dim()) throw Error(ErrorKind::dimension, "coarse rotation dimension mismatch");
  }

  // Writes the (possibly rotated) vector to `out` and returns it.
  const float* prepare(const float* x, std::vector<float>& out) const {
    if (!rotation) return x;
    out.resize(dim());
    rotation->apply(x, out.data());
    return out.data();
  }

  friend bool operator==(const CoarsePair&, const CoarsePair&) = default;
};

struct CoarseTrainOptions {
  std::size_t kmeans_iters = 25;
  std::size_t opq_iters = 10;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Two independent k-means runs on the vector halves. With `optimized`, an
/// OPQ rotation of the full space is learned first (two parts of size t), and
/// its codebooks become the coarse books.
inline CoarsePair train_coarse(const DenseVectorSet& learn, std::size_t t, bool optimized,
                               const CoarseTrainOptions& opts = {}) {
  if (learn.count() == 0) throw Error(ErrorKind::empty, "empty learn set");
  if (learn.dim() % 2 != 0) throw Error(ErrorKind::dimension, "multi-index needs an even dimension");
  if (optimized) {
    OpqOptions o;
    o.outer_iters = opts.opq_iters;
    o.kmeans_iters = opts.kmeans_iters;
    o.seed = opts.seed;
    o.threads = opts.threads;
    auto opq = opq_train(learn, 2, t, o);
    return CoarsePair{opq.codec.book(0), opq.codec.book(1), std::move(opq.rotation)};
  }
  const std::size_t h = learn.dim() / 2;
  CoarsePair pair;
  pair.book1 = kmeans_train(learn.slice_columns(0, h), t, opts.kmeans_iters, opts.seed, opts.threads);
  pair.book2 = kmeans_train(learn.slice_columns(h, h), t, opts.kmeans_iters, opts.seed + 1, opts.threads);
  return pair;
}

struct CellId {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  friend bool operator==(const CellId&, const CellId&) = default;
};

// x must already be in the coarse (rotated) frame.
inline CellId assign_cell_prepared(const CoarsePair& coarse, const float* x) {
  return {nearest_centroid(coarse.book1, x).id, nearest_centroid(coarse.book2, x + coarse.half_dim()).id};
}

inline CellId assign_cell(const CoarsePair& coarse, std::span<const float> x) {
  check_dim(x.size(), coarse.dim(), "assign_cell");
  std::vector<float> buf;
  return assign_cell_prepared(coarse, coarse.prepare(x.data(), buf));
}

// Displacement x - [c_i; c_j] in the coarse frame.
inline void displacement(const CoarsePair& coarse, const float* x, CellId cell, float* out) {
  const std::size_t h = coarse.half_dim();
  const float* c1 = coarse.book1.centroid(cell.i);
  const float* c2 = coarse.book2.centroid(cell.j);
  for (std::size_t d = 0; d < h; ++d) out[d] = x[d] - c1[d];
  for (std::size_t d = 0; d < h; ++d) out[h + d] = x[h + d] - c2[d];
}

/// Displacements of every vector from its own cell centroid, in the coarse
/// frame.
inline DenseVectorSet displacements(const CoarsePair& coarse, const DenseVectorSet& points, unsigned threads = 1) {
  check_dim(points.dim(), coarse.dim(), "displacements");
  DenseVectorSet out(points.dim(), points.count());
  parallel_for(points.count(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<float> buf;
    for (std::size_t i = begin; i < end; ++i) {
      const float* x = coarse.prepare(points.ptr(i), buf);
      displacement(coarse, x, assign_cell_prepared(coarse, x), out.ptr(i));
    }
  });
  return out;
}

struct FineTrainOptions {
  std::size_t kmeans_iters = 25;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Global fine codebooks R_1..R_M learned on displacements from all cells.
inline PqCodec train_fine_global(const DenseVectorSet& learn, const CoarsePair& coarse, std::size_t m, std::size_t k,
                                 const FineTrainOptions& opts = {}) {
  if (learn.count() == 0) throw Error(ErrorKind::empty, "empty learn set");
  return pq_train(displacements(coarse, learn, opts.threads), m, k, opts.kmeans_iters, opts.seed, opts.threads);
}

/// Start offsets of the T*T cells; cell (i, j) lives at linear index i*T + j.
struct CellTable {
  std::size_t t = 0;
  std::vector<std::uint64_t> offsets;  // t*t + 1 entries

  std::size_t num_cells() const { return t * t; }
  std::size_t linear(CellId c) const { return std::size_t(c.i) * t + c.j; }
  std::uint64_t begin(CellId c) const { return offsets[linear(c)]; }
  std::uint64_t end(CellId c) const { return offsets[linear(c) + 1]; }
  std::uint64_t total() const { return offsets.empty() ? 0 : offsets.back(); }

  std::size_t populated() const {
    std::size_t n = 0;
    for (std::size_t c = 0; c + 1 < offsets.size(); ++c) n += offsets[c + 1] > offsets[c];
    return n;
  }

  friend bool operator==(const CellTable&, const CellTable&) = default;
};

struct IndexParams {
  std::size_t dim = 0;
  std::size_t t = 0;
  std::size_t m = 0;
  std::size_t k = 0;

  friend bool operator==(const IndexParams&, const IndexParams&) = default;
};

inline void validate_params(const IndexParams& p) {
  if (p.dim == 0 || p.dim % 2 != 0) throw Error(ErrorKind::config, "dimension must be positive and even");
  if (p.m == 0 || p.m % 2 != 0 || p.dim % p.m != 0) {
    throw Error(ErrorKind::config, "m must be even and divide the dimension");
  }
  if (p.m > 16) throw Error(ErrorKind::config, "m must be at most 16");
  if (p.k == 0 || p.k > 256) throw Error(ErrorKind::config, "k must be in [1, 256]");
  if (p.t == 0) throw Error(ErrorKind::config, "t must be positive");
}

/// Cell table plus packed entries (ids and M-byte codes), grouped by cell and
/// ascending by id inside a cell.
struct CellStore {
  CellTable cells;
  std::vector<std::uint32_t> ids;
  std::vector<std::uint8_t> codes;  // ids.size() * code_size

  std::size_t size() const { return ids.size(); }

  friend bool operator==(const CellStore&, const CellStore&) = default;
};

// Two-pass counting sort: per-point cell and code are computed in parallel,
// then scattered in point order, so the layout is thread-count invariant.
template <typename Encode>
CellStore build_cell_store(const DenseVectorSet& base, const CoarsePair& coarse, std::size_t code_size,
                           std::uint64_t id_offset, unsigned threads, Encode&& encode) {
  check_dim(base.dim(), coarse.dim(), "build_index");
  const std::size_t n = base.count();
  if (id_offset + n > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorKind::range, "point ids exceed the 32-bit id space");
  }
  const std::size_t t = coarse.size();
  std::vector<std::uint64_t> cell_of(n);
  std::vector<std::uint8_t> codes(n * code_size);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<float> buf, disp(base.dim());
    for (std::size_t p = begin; p < end; ++p) {
      const float* x = coarse.prepare(base.ptr(p), buf);
      const CellId c = assign_cell_prepared(coarse, x);
      displacement(coarse, x, c, disp.data());
      encode(c, disp.data(), codes.data() + p * code_size);
      cell_of[p] = std::uint64_t(c.i) * t + c.j;
    }
  });
  CellStore store;
  store.cells.t = t;
  store.cells.offsets.assign(t * t + 1, 0);
  for (auto c : cell_of) ++store.cells.offsets[c + 1];
  for (std::size_t c = 0; c < t * t; ++c) store.cells.offsets[c + 1] += store.cells.offsets[c];
  std::vector<std::uint64_t> cursor(store.cells.offsets.begin(), store.cells.offsets.end() - 1);
  store.ids.resize(n);
  store.codes.resize(n * code_size);
  for (std::size_t p = 0; p < n; ++p) {
    const std::uint64_t at = cursor[cell_of[p]]++;
    store.ids[at] = static_cast<std::uint32_t>(id_offset + p);
    std::copy_n(codes.data() + p * code_size, code_size, store.codes.data() + at * code_size);
  }
  return store;
}

class MultiIndex {
 public:
  MultiIndex() = default;
  MultiIndex(IndexParams params, CoarsePair coarse, PqCodec fine, CellStore store)
      : params_(params), coarse_(std::move(coarse)), fine_(std::move(fine)), store_(std::move(store)) {
    validate();
  }

  const IndexParams& params() const { return params_; }
  const CoarsePair& coarse() const { return coarse_; }
  const PqCodec& fine() const { return fine_; }
  const CellTable& cells() const { return store_.cells; }
  const CellStore& store() const { return store_; }
  std::size_t size() const { return store_.size(); }
  std::uint32_t id_at(std::size_t pos) const { return store_.ids[pos]; }
  const std::uint8_t* code_at(std::size_t pos) const { return store_.codes.data() + pos * params_.m; }
  std::size_t bytes_per_point() const { return sizeof(std::uint32_t) + params_.m; }

  friend bool operator==(const MultiIndex&, const MultiIndex&) = default;

 private:
  void validate() const {
    validate_params(params_);
    coarse_.validate();
    if (coarse_.dim() != params_.dim || coarse_.size() != params_.t) {
      throw Error(ErrorKind::dimension, "coarse codebooks do not match index parameters");
    }
    if (fine_.dim() != params_.dim || fine_.num_parts() != params_.m || fine_.size() != params_.k) {
      throw Error(ErrorKind::dimension, "fine codebooks do not match index parameters");
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
  PqCodec fine_;
  CellStore store_;
};

inline MultiIndex build_index(const DenseVectorSet& base, const CoarsePair& coarse, const PqCodec& fine,
                              std::uint64_t id_offset = 0, unsigned threads = 1) {
  const IndexParams params{coarse.dim(), coarse.size(), fine.num_parts(), fine.size()};
  validate_params(params);
  check_dim(fine.dim(), coarse.dim(), "fine codebooks");
  auto store = build_cell_store(base, coarse, fine.num_parts(), id_offset, threads,
                                [&](CellId, const float* disp, std::uint8_t* out) { pq_encode_bytes(fine, disp, out); });
  return MultiIndex(params, coarse, fine, std::move(store));
}

/// Per-query pass over both coarse codebooks: squared distances for the
/// multi-sequence and dot products reused by the FBPQ query state.
struct CoarseScan {
  std::vector<float> query;  // in the coarse frame
  std::vector<float> r1, r2;
  std::vector<float> dot1, dot2;
};

inline CoarseScan scan_coarse(const CoarsePair& coarse, std::span<const float> q, bool with_dots = false) {
  check_dim(q.size(), coarse.dim(), "query");
  CoarseScan s;
  s.query.assign(q.begin(), q.end());
  if (coarse.rotation) coarse.rotation->apply(q.data(), s.query.data());
  const std::size_t h = coarse.half_dim();
  const std::size_t t = coarse.size();
  s.r1.resize(t);
  s.r2.resize(t);
  const float* q1 = s.query.data();
  const float* q2 = q1 + h;
  for (std::size_t c = 0; c < t; ++c) {
    s.r1[c] = l2_sqr(q1, coarse.book1.centroid(c), h);
    s.r2[c] = l2_sqr(q2, coarse.book2.centroid(c), h);
  }
  if (with_dots) {
    s.dot1.resize(t);
    s.dot2.resize(t);
    for (std::size_t c = 0; c < t; ++c) {
      s.dot1[c] = dot(q1, coarse.book1.centroid(c), h);
      s.dot2[c] = dot(q2, coarse.book2.centroid(c), h);
    }
  }
  return s;
}

inline CellSequence multi_sequence(const CoarsePair& coarse, std::span<const float> q) {
  const auto scan = scan_coarse(coarse, q);
  return CellSequence(scan.r1, scan.r2);
}

struct VisitedCell {
  CellId cell;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
};

/// Walks cells nearest-first until at least `budget` entries are gathered.
/// The cell that crosses the budget is taken whole; empty cells cost nothing.
inline std::vector<VisitedCell> collect_cells(const CellTable& cells, const CoarseScan& scan, std::size_t budget) {
  std::vector<VisitedCell> out;
  if (cells.total() == 0) return out;
  CellSequence seq(scan.r1, scan.r2);
  std::uint64_t gathered = 0;
  while (gathered < budget) {
    const auto v = seq.next();
    if (!v) break;
    const CellId c{v->i, v->j};
    const auto b = cells.begin(c);
    const auto e = cells.end(c);
    if (b == e) continue;
    out.push_back({c, b, e});
    gathered += e - b;
  }
  return out;
}

inline void check_budget(std::size_t l, std::size_t r) {
  if (r < 1 || l < r) throw Error(ErrorKind::config, "need l >= r >= 1");
}

/// Explicit O(D) reconstruction: per visited cell the query displacement
/// q - [c_i; c_j] is formed once, then each candidate's decoded displacement
/// is subtracted component by component.
template <typename Counter = NullCounter>
void rerank_baseline(const MultiIndex& index, const CoarseScan& scan, std::span<const VisitedCell> visited,
                     std::vector<Neighbor>& out, Counter& counter) {
  const std::size_t d = index.params().dim;
  const std::size_t m = index.params().m;
  const std::size_t sub = index.fine().sub_dim();
  std::vector<float> qdisp(d);
  for (const auto& v : visited) {
    displacement(index.coarse(), scan.query.data(), v.cell, qdisp.data());
    if constexpr (Counter::enabled) counter.overhead(2, d);
    for (std::uint64_t pos = v.begin; pos < v.end; ++pos) {
      const std::uint8_t* code = index.code_at(pos);
      float dist = 0.0f;
      for (std::size_t part = 0; part < m; ++part) {
        dist += l2_sqr(qdisp.data() + part * sub, index.fine().book(part).centroid(code[part]), sub);
      }
      if constexpr (Counter::enabled) counter.candidate(m, 3 * d);
      out.push_back({index.id_at(pos), dist});
    }
  }
}

template <typename Counter = NullCounter>
SearchResult search_baseline(const MultiIndex& index, std::span<const float> q, std::size_t l, std::size_t r,
                             Counter& counter) {
  check_budget(l, r);
  check_dim(q.size(), index.params().dim, "search_baseline");
  SearchResult res;
  if (index.size() == 0) return res;
  const auto scan = scan_coarse(index.coarse(), q);
  const auto visited = collect_cells(index.cells(), scan, l);
  rerank_baseline(index, scan, visited, res.neighbors, counter);
  res.candidates = res.neighbors.size();
  res.cells_visited = visited.size();
  keep_top(res.neighbors, r);
  return res;
}

inline SearchResult search_baseline(const MultiIndex& index, std::span<const float> q, std::size_t l, std::size_t r) {
  NullCounter c;
  return search_baseline(index, q, l, r, c);
}

/// Reconstruction of stored entry `pos` in the original frame (rotation undone).
inline std::vector<float> reconstruct(const MultiIndex& index, std::size_t pos, CellId cell) {
  const std::size_t d = index.params().dim;
  const std::size_t h = d / 2;
  const std::size_t sub = index.fine().sub_dim();
  std::vector<float> x(d);
  const std::uint8_t* code = index.code_at(pos);
  for (std::size_t part = 0; part < index.params().m; ++part) {
    std::copy_n(index.fine().book(part).centroid(code[part]), sub, x.data() + part * sub);
  }
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
