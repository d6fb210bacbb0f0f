#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <vector>

#include "bpq/common.hpp"

namespace bpq {

struct CellVisit {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  float key = 0.0f;
};

/// Lazily enumerates every (i, j) in ascending r1[i] + r2[j], ties broken by
/// smaller i then smaller j.
///
/// Both lists are sorted once (by value, then id), and a heap holds the
/// frontier in rank space. A cell (a, b) is pushed only after both (a-1, b)
/// and (a, b-1) have been emitted. The emitted set is always a staircase, so
/// "was (a, b) emitted" is just row_len_[a] > b.
class CellSequence {
 public:
  CellSequence(std::span<const float> r1, std::span<const float> r2) {
    if (r1.empty() || r2.empty()) return;
    sort_list(r1, ids1_, keys1_);
    sort_list(r2, ids2_, keys2_);
    row_len_.assign(ids1_.size(), 0);
    push(0, 0);
  }

  bool done() const { return heap_.empty(); }

  std::optional<CellVisit> next() {
    if (heap_.empty()) return std::nullopt;
    const Entry top = heap_.top();
    heap_.pop();
    const std::uint32_t a = top.a;
    const std::uint32_t b = top.b;
    row_len_[a] = b + 1;
    if (a + 1 < ids1_.size() && (b == 0 || row_len_[a + 1] >= b)) push(a + 1, b);
    if (b + 1 < ids2_.size() && (a == 0 || row_len_[a - 1] >= b + 2)) push(a, b + 1);
    return CellVisit{top.i, top.j, top.key};
  }

  std::size_t frontier_size() const { return heap_.size(); }

 private:
  struct Entry {
    float key;
    std::uint32_t i, j;  // codeword ids
    std::uint32_t a, b;  // ranks in the sorted lists
  };
  struct Greater {
    bool operator()(const Entry& x, const Entry& y) const {
      if (x.key != y.key) return x.key > y.key;
      if (x.i != y.i) return x.i > y.i;
      return x.j > y.j;
    }
  };

  static void sort_list(std::span<const float> r, std::vector<std::uint32_t>& ids, std::vector<float>& keys) {
    ids.resize(r.size());
    std::iota(ids.begin(), ids.end(), 0u);
    std::sort(ids.begin(), ids.end(), [&](std::uint32_t x, std::uint32_t y) {
      return r[x] < r[y] || (r[x] == r[y] && x < y);
    });
    keys.resize(r.size());
    for (std::size_t k = 0; k < r.size(); ++k) keys[k] = r[ids[k]];
  }

  void push(std::uint32_t a, std::uint32_t b) { heap_.push({keys1_[a] + keys2_[b], ids1_[a], ids2_[b], a, b}); }

  std::vector<std::uint32_t> ids1_, ids2_;
  std::vector<float> keys1_, keys2_;
  std::vector<std::uint32_t> row_len_;
  std::priority_queue<Entry, std::vector<Entry>, Greater> heap_;
};

inline CellSequence multi_sequence(std::span<const float> r1, std::span<const float> r2) { return {r1, r2}; }

}  // namespace bpq
