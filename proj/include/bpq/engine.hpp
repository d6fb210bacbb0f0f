#pragma once

// Uniform, non-owning handle over the three search engines. Search is split
// into a preparation step (coarse scan, cell traversal, per-query tables) and
// a rerank step so that candidate evaluation can be measured on its own.

#include <span>
#include <string>
#include <vector>

#include "bpq/fbpq.hpp"
#include "bpq/hbpq.hpp"
#include "bpq/multi_index.hpp"

namespace bpq {

enum class EngineKind { baseline, fbpq, hbpq };

inline const char* to_string(EngineKind k) {
  switch (k) {
    case EngineKind::baseline: return "baseline";
    case EngineKind::fbpq: return "fbpq";
    case EngineKind::hbpq: return "hbpq";
  }
  return "?";
}

inline EngineKind parse_engine(const std::string& s) {
  if (s == "baseline") return EngineKind::baseline;
  if (s == "fbpq") return EngineKind::fbpq;
  if (s == "hbpq") return EngineKind::hbpq;
  throw Error(ErrorKind::config, "unknown engine '" + s + "' (expected baseline, fbpq or hbpq)");
}

struct PreparedQuery {
  CoarseScan scan;
  std::vector<VisitedCell> cells;
  std::vector<float> fine;  // fused FBPQ fine table, FBPQ only
};

class Engine {
 public:
  static Engine baseline(const MultiIndex& index) { return Engine(EngineKind::baseline, &index, nullptr, nullptr); }
  static Engine fbpq(const MultiIndex& index, const FbpqTables& tables) {
    if (tables.t != index.params().t || tables.m != index.params().m || tables.k != index.params().k) {
      throw Error(ErrorKind::config, "FBPQ tables do not match the index");
    }
    return Engine(EngineKind::fbpq, &index, &tables, nullptr);
  }
  static Engine hbpq(const HbpqIndex& index) { return Engine(EngineKind::hbpq, nullptr, nullptr, &index); }

  EngineKind kind() const { return kind_; }
  std::string name() const { return to_string(kind_); }
  std::size_t dim() const { return global_ ? global_->params().dim : local_->params().dim; }
  std::size_t size() const { return global_ ? global_->size() : local_->size(); }
  const CoarsePair& coarse() const { return global_ ? global_->coarse() : local_->coarse(); }
  const CellTable& cells() const { return global_ ? global_->cells() : local_->cells(); }

  template <typename Counter>
  SearchResult search(std::span<const float> q, std::size_t l, std::size_t r, Counter& counter) const {
    switch (kind_) {
      case EngineKind::baseline: return search_baseline(*global_, q, l, r, counter);
      case EngineKind::fbpq: return search_fbpq(*global_, *tables_, q, l, r, counter);
      case EngineKind::hbpq: return search_hbpq(*local_, q, l, r, counter);
    }
    return {};
  }

  SearchResult search(std::span<const float> q, std::size_t l, std::size_t r) const {
    NullCounter c;
    return search(q, l, r, c);
  }

  PreparedQuery prepare(std::span<const float> q, std::size_t l) const {
    check_dim(q.size(), dim(), "query");
    PreparedQuery p;
    p.scan = scan_coarse(coarse(), q, kind_ == EngineKind::fbpq);
    p.cells = collect_cells(cells(), p.scan, l);
    if (kind_ == EngineKind::fbpq) p.fine = fused_fine_table(prepare_query(global_->fine(), p.scan), *tables_);
    return p;
  }

  // Unsorted candidates in traversal order.
  template <typename Counter>
  void rerank(const PreparedQuery& p, std::vector<Neighbor>& out, Counter& counter) const {
    switch (kind_) {
      case EngineKind::baseline: rerank_baseline(*global_, p.scan, p.cells, out, counter); break;
      case EngineKind::fbpq: rerank_fbpq(*global_, *tables_, p.scan, p.fine, p.cells, out, counter); break;
      case EngineKind::hbpq: rerank_hbpq(*local_, p.scan, p.cells, out, counter); break;
    }
  }

  void rerank(const PreparedQuery& p, std::vector<Neighbor>& out) const {
    NullCounter c;
    rerank(p, out, c);
  }

 private:
  Engine(EngineKind kind, const MultiIndex* global, const FbpqTables* tables, const HbpqIndex* local)
      : kind_(kind), global_(global), tables_(tables), local_(local) {}

  EngineKind kind_;
  const MultiIndex* global_;
  const FbpqTables* tables_;
  const HbpqIndex* local_;
};

}  // namespace bpq
