#pragma once

// Fast bilayer PQ: the distance to a candidate in cell (i, j) with fine code
// [r_1..r_M] expands to
//
//   ||q||^2 - 2<q, [c_i; c_j]> - 2 sum_m <q_m, r_m>
//     + ||c_i||^2 + ||c_j||^2 + sum_m ||r_m||^2
//     + 2 sum_{m < M/2} <c_i, r_m> + 2 sum_{m >= M/2} <c_j, r_m>
//
// Every term is a lookup into either a query-independent table (norms and
// coarse/fine cross products) or a per-query dot-product table, so each
// candidate costs O(M) instead of O(D).

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bpq/common.hpp"
#include "bpq/multi_index.hpp"
#include "bpq/serialize.hpp"

namespace bpq {

struct FbpqTables {
  std::size_t t = 0;
  std::size_t m = 0;
  std::size_t k = 0;
  std::vector<float> coarse_norms;  // 2T: book1 then book2
  std::vector<float> fine_norms;    // M x K
  std::vector<float> cross1;        // T x M/2 x K: <c_i^1 slice m, R_m(k)>
  std::vector<float> cross2;        // T x M/2 x K: <c_j^2 slice m, R_{M/2+m}(k)>

  std::size_t half() const { return m / 2; }

  static std::size_t element_count(std::size_t t, std::size_t m, std::size_t k) {
    return t * m * k + 2 * t + m * k;
  }
  std::size_t element_count() const {
    return coarse_norms.size() + fine_norms.size() + cross1.size() + cross2.size();
  }

  float cross_first(std::size_t i, std::size_t part, std::size_t code) const {
    return cross1[(i * half() + part) * k + code];
  }
  float cross_second(std::size_t j, std::size_t part, std::size_t code) const {
    return cross2[(j * half() + part) * k + code];
  }

  friend bool operator==(const FbpqTables&, const FbpqTables&) = default;
};

inline FbpqTables build_tables(const CoarsePair& coarse, const PqCodec& fine) {
  coarse.validate();
  check_dim(fine.dim(), coarse.dim(), "build_tables");
  if (fine.num_parts() % 2 != 0) throw Error(ErrorKind::config, "FBPQ needs an even number of parts");
  FbpqTables tb;
  tb.t = coarse.size();
  tb.m = fine.num_parts();
  tb.k = fine.size();
  const std::size_t h = coarse.half_dim();
  const std::size_t sub = fine.sub_dim();
  const std::size_t half = tb.half();
  tb.coarse_norms.resize(2 * tb.t);
  for (std::size_t c = 0; c < tb.t; ++c) {
    tb.coarse_norms[c] = norm_sqr(coarse.book1.centroid(c), h);
    tb.coarse_norms[tb.t + c] = norm_sqr(coarse.book2.centroid(c), h);
  }
  tb.fine_norms.resize(tb.m * tb.k);
  for (std::size_t part = 0; part < tb.m; ++part) {
    for (std::size_t c = 0; c < tb.k; ++c) tb.fine_norms[part * tb.k + c] = norm_sqr(fine.book(part).centroid(c), sub);
  }
  tb.cross1.resize(tb.t * half * tb.k);
  tb.cross2.resize(tb.t * half * tb.k);
  for (std::size_t i = 0; i < tb.t; ++i) {
    for (std::size_t part = 0; part < half; ++part) {
      const float* c1 = coarse.book1.centroid(i) + part * sub;
      const float* c2 = coarse.book2.centroid(i) + part * sub;
      float* row1 = tb.cross1.data() + (i * half + part) * tb.k;
      float* row2 = tb.cross2.data() + (i * half + part) * tb.k;
      for (std::size_t c = 0; c < tb.k; ++c) {
        row1[c] = dot(c1, fine.book(part).centroid(c), sub);
        row2[c] = dot(c2, fine.book(half + part).centroid(c), sub);
      }
    }
  }
  return tb;
}

inline FbpqTables build_tables(const MultiIndex& index) { return build_tables(index.coarse(), index.fine()); }

/// Per-query dot products; coarse ones come out of the same pass that yields
/// the multi-sequence distances.
struct FbpqQueryState {
  float q_norm = 0.0f;
  std::vector<float> qdot_coarse1;  // T
  std::vector<float> qdot_coarse2;  // T
  std::vector<float> qdot_fine;     // M x K
};

inline FbpqQueryState prepare_query(const PqCodec& fine, const CoarseScan& scan) {
  FbpqQueryState st;
  const std::size_t sub = fine.sub_dim();
  st.q_norm = norm_sqr(scan.query.data(), scan.query.size());
  st.qdot_coarse1 = scan.dot1;
  st.qdot_coarse2 = scan.dot2;
  st.qdot_fine.resize(fine.num_parts() * fine.size());
  for (std::size_t part = 0; part < fine.num_parts(); ++part) {
    const float* qm = scan.query.data() + part * sub;
    for (std::size_t c = 0; c < fine.size(); ++c) {
      st.qdot_fine[part * fine.size() + c] = dot(qm, fine.book(part).centroid(c), sub);
    }
  }
  return st;
}

inline FbpqQueryState prepare_query(const MultiIndex& index, const FbpqTables& tables, std::span<const float> q) {
  check_dim(q.size(), index.params().dim, "prepare_query");
  if (tables.t != index.params().t || tables.m != index.params().m || tables.k != index.params().k) {
    throw Error(ErrorKind::config, "FBPQ tables do not match the index");
  }
  return prepare_query(index.fine(), scan_coarse(index.coarse(), q, true));
}

/// Distance by the full expansion; touches no D-dimensional data.
template <typename Counter = NullCounter>
float fbpq_distance(const FbpqQueryState& st, const FbpqTables& tb, std::size_t i, std::size_t j,
                    std::span<const std::uint8_t> code, Counter& counter) {
  if (i >= tb.t || j >= tb.t) throw Error(ErrorKind::range, "cell index out of range");
  if (code.size() != tb.m) throw Error(ErrorKind::range, "code length does not match tables");
  const std::size_t half = tb.half();
  float query_term = st.qdot_coarse1[i] + st.qdot_coarse2[j];
  float norm_term = tb.coarse_norms[i] + tb.coarse_norms[tb.t + j];
  float cross_term = 0.0f;
  for (std::size_t part = 0; part < tb.m; ++part) {
    const std::size_t c = code[part];
    if (c >= tb.k) throw Error(ErrorKind::range, "code index out of range in part " + std::to_string(part));
    query_term += st.qdot_fine[part * tb.k + c];
    norm_term += tb.fine_norms[part * tb.k + c];
    cross_term += part < half ? tb.cross_first(i, part, c) : tb.cross_second(j, part - half, c);
  }
  if constexpr (Counter::enabled) counter.candidate(4 + 3 * tb.m, 3 * tb.m + 6);
  return st.q_norm - 2.0f * query_term + norm_term + 2.0f * cross_term;
}

inline float fbpq_distance(const FbpqQueryState& st, const FbpqTables& tb, std::size_t i, std::size_t j,
                           std::span<const std::uint8_t> code) {
  NullCounter c;
  return fbpq_distance(st, tb, i, j, code, c);
}

inline float fbpq_distance(const FbpqQueryState& st, const FbpqTables& tb, std::size_t i, std::size_t j,
                           const PqCode& code) {
  std::vector<std::uint8_t> bytes(code.size());
  for (std::size_t m = 0; m < code.size(); ++m) {
    if (code[m] >= tb.k) throw Error(ErrorKind::range, "code index out of range in part " + std::to_string(m));
    bytes[m] = static_cast<std::uint8_t>(code[m]);
  }
  return fbpq_distance(st, tb, i, j, std::span<const std::uint8_t>(bytes));
}

/// Query-dependent fine term folded with the fine norms:
/// fine[m][k] = ||R_m(k)||^2 - 2 <q_m, R_m(k)>.
inline std::vector<float> fused_fine_table(const FbpqQueryState& st, const FbpqTables& tb) {
  std::vector<float> out(tb.m * tb.k);
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = tb.fine_norms[e] - 2.0f * st.qdot_fine[e];
  return out;
}

/// Hot loop of the FBPQ search. The cell term ||q - [c_i; c_j]||^2 equals
/// r1[i] + r2[j] from the coarse scan, so per candidate only 2M lookups
/// remain: the fused fine table and the cell's cross-product rows.
template <typename Counter = NullCounter>
void rerank_fbpq(const MultiIndex& index, const FbpqTables& tb, const CoarseScan& scan, std::span<const float> fine,
                 std::span<const VisitedCell> visited, std::vector<Neighbor>& out, Counter& counter) {
  const std::size_t m = tb.m;
  const std::size_t half = tb.half();
  const std::size_t k = tb.k;
  for (const auto& v : visited) {
    const float cell_term = scan.r1[v.cell.i] + scan.r2[v.cell.j];
    const float* row1 = tb.cross1.data() + std::size_t(v.cell.i) * half * k;
    const float* row2 = tb.cross2.data() + std::size_t(v.cell.j) * half * k;
    if constexpr (Counter::enabled) counter.overhead(2, 1);
    for (std::uint64_t pos = v.begin; pos < v.end; ++pos) {
      const std::uint8_t* code = index.code_at(pos);
      float fine_sum = 0.0f;
      float cross_sum = 0.0f;
      for (std::size_t part = 0; part < half; ++part) {
        fine_sum += fine[part * k + code[part]];
        cross_sum += row1[part * k + code[part]];
      }
      for (std::size_t part = half; part < m; ++part) {
        fine_sum += fine[part * k + code[part]];
        cross_sum += row2[(part - half) * k + code[part]];
      }
      if constexpr (Counter::enabled) counter.candidate(2 * m, 2 * m + 2);
      out.push_back({index.id_at(pos), cell_term + fine_sum + 2.0f * cross_sum});
    }
  }
}

template <typename Counter = NullCounter>
SearchResult search_fbpq(const MultiIndex& index, const FbpqTables& tables, std::span<const float> q, std::size_t l,
                         std::size_t r, Counter& counter) {
  check_budget(l, r);
  check_dim(q.size(), index.params().dim, "search_fbpq");
  if (tables.t != index.params().t || tables.m != index.params().m || tables.k != index.params().k) {
    throw Error(ErrorKind::config, "FBPQ tables do not match the index");
  }
  SearchResult res;
  if (index.size() == 0) return res;
  const auto scan = scan_coarse(index.coarse(), q, true);
  const auto state = prepare_query(index.fine(), scan);
  const auto fine = fused_fine_table(state, tables);
  if constexpr (Counter::enabled) counter.overhead(0, tables.m * tables.k * (2 * index.fine().sub_dim() + 2));
  const auto visited = collect_cells(index.cells(), scan, l);
  rerank_fbpq(index, tables, scan, fine, visited, res.neighbors, counter);
  res.candidates = res.neighbors.size();
  res.cells_visited = visited.size();
  keep_top(res.neighbors, r);
  return res;
}

inline SearchResult search_fbpq(const MultiIndex& index, const FbpqTables& tables, std::span<const float> q,
                                std::size_t l, std::size_t r) {
  NullCounter c;
  return search_fbpq(index, tables, q, l, r, c);
}

inline std::vector<std::uint8_t> serialize_tables(const FbpqTables& tb) {
  ByteWriter w;
  w.put_magic("BPQT");
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tb.t));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tb.m));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tb.k));
  w.put_array(std::span<const float>(tb.coarse_norms));
  w.put_array(std::span<const float>(tb.fine_norms));
  w.put_array(std::span<const float>(tb.cross1));
  w.put_array(std::span<const float>(tb.cross2));
  return w.take();
}

inline FbpqTables deserialize_tables(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("BPQT");
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw Error(ErrorKind::version, "unsupported table file version " + std::to_string(version));
  FbpqTables tb;
  tb.t = r.get<std::uint32_t>();
  tb.m = r.get<std::uint32_t>();
  tb.k = r.get<std::uint32_t>();
  if (tb.m % 2 != 0) throw Error(ErrorKind::format, "odd part count in table file");
  tb.coarse_norms = r.get_vector<float>(2 * tb.t);
  tb.fine_norms = r.get_vector<float>(tb.m * tb.k);
  tb.cross1 = r.get_vector<float>(tb.t * tb.half() * tb.k);
  tb.cross2 = r.get_vector<float>(tb.t * tb.half() * tb.k);
  return tb;
}

inline void save_tables(const FbpqTables& tb, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_tables(tb));
}

inline FbpqTables load_tables(const std::filesystem::path& path) { return deserialize_tables(read_file_bytes(path)); }

}  // namespace bpq
