#include <gtest/gtest.h>

#include <map>
#include <set>

#include "fixtures.hpp"

using namespace bpq;

namespace {

// Every combination of `t` first-half values with `t` second-half values.
DenseVectorSet grid_points(std::size_t t, std::size_t half, std::uint64_t seed) {
  const auto a = oracle::random_set(t, half, seed);
  const auto b = oracle::random_set(t, half, seed + 1);
  DenseVectorSet out(2 * half, t * t);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      std::copy_n(a.ptr(i), half, out.ptr(i * t + j));
      std::copy_n(b.ptr(j), half, out.ptr(i * t + j) + half);
    }
  }
  return out;
}

std::vector<float> concat(std::span<const float> a, std::span<const float> b) {
  std::vector<float> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Oracle distance from q to stored entry `pos`, rebuilt from the raw parts.
double oracle_entry_distance(const MultiIndex& index, std::size_t pos, CellId cell, std::span<const float> q) {
  const std::size_t d = index.params().dim;
  const std::size_t sub = index.fine().sub_dim();
  std::vector<float> x(d);
  for (std::size_t m = 0; m < index.params().m; ++m) {
    for (std::size_t c = 0; c < sub; ++c) x[m * sub + c] = index.fine().book(m).centroid(index.code_at(pos)[m])[c];
  }
  for (std::size_t c = 0; c < d / 2; ++c) {
    x[c] += index.coarse().book1.centroid(cell.i)[c];
    x[d / 2 + c] += index.coarse().book2.centroid(cell.j)[c];
  }
  std::vector<float> qq(q.begin(), q.end());
  if (index.coarse().rotation) qq = index.coarse().rotation->apply(q);
  return oracle::sq_dist(qq.data(), x.data(), d);
}

std::set<std::uint32_t> candidate_ids(const MultiIndex& index, std::span<const float> q, std::size_t l) {
  const auto scan = scan_coarse(index.coarse(), q);
  std::set<std::uint32_t> out;
  for (const auto& v : collect_cells(index.cells(), scan, l)) {
    for (auto p = v.begin; p < v.end; ++p) out.insert(index.id_at(p));
  }
  return out;
}

}  // namespace

TEST(TrainCoarse, SaturatedHalvesReproduced) {
  const auto pts = grid_points(4, 3, 10);
  const auto coarse = train_coarse(pts, 4, false);
  EXPECT_FALSE(coarse.rotation.has_value());
  EXPECT_EQ(coarse.size(), 4u);
  EXPECT_EQ(coarse.half_dim(), 3u);
  for (std::size_t i = 0; i < pts.count(); ++i) {
    const auto cell = assign_cell(coarse, pts.row(i));
    std::vector<float> disp(6);
    displacement(coarse, pts.ptr(i), cell, disp.data());
    for (float v : disp) EXPECT_EQ(v, 0.0f);
  }
}

TEST(TrainCoarse, OccupancyOnClusteredData) {
  const auto learn = generate_clustered(60, 50, 16, 0.05f, 3);
  const auto coarse = train_coarse(learn, 16, false);
  std::vector<std::size_t> count1(16), count2(16);
  for (std::size_t p = 0; p < learn.count(); ++p) {
    const auto c = assign_cell(coarse, learn.row(p));
    ++count1[c.i];
    ++count2[c.j];
  }
  const auto used = [](const std::vector<std::size_t>& v) {
    return std::count_if(v.begin(), v.end(), [](std::size_t n) { return n > 0; });
  };
  EXPECT_GE(used(count1), 8);
  EXPECT_GE(used(count2), 8);
}

TEST(TrainCoarse, Errors) {
  EXPECT_THROW(train_coarse(DenseVectorSet(4, 0), 2, false), Error);
  EXPECT_THROW(train_coarse(oracle::random_set(10, 5, 1), 2, false), Error);
}

TEST(TrainCoarse, OptimizedCarriesOrthogonalRotation) {
  const auto& w = fixture::small_optimized();
  ASSERT_TRUE(w.coarse.rotation.has_value());
  EXPECT_LE(w.coarse.rotation->orthogonality_error(), 1e-4);
}

TEST(AssignCell, IdentityAndTies) {
  const auto& w = fixture::small();
  const auto x = concat(w.coarse.book1.row(7), w.coarse.book2.row(3));
  EXPECT_EQ(assign_cell(w.coarse, x), (CellId{7, 3}));

  CoarsePair tie{Codebook(1, std::vector<float>{1, -1, 5}), Codebook(1, std::vector<float>{4, 2, 2}), std::nullopt};
  EXPECT_EQ(assign_cell(tie, std::vector<float>{0, 2}), (CellId{0, 1}));
  EXPECT_THROW(assign_cell(tie, std::vector<float>{0, 2, 3}), Error);
}

TEST(AssignCell, MatchesExhaustiveJointScan) {
  const auto& w = fixture::small();
  const auto xs = oracle::random_set(300, 16, 4, -0.5f, 1.5f);
  for (std::size_t i = 0; i < xs.count(); ++i) {
    EXPECT_EQ(assign_cell(w.coarse, xs.row(i)), oracle::exhaustive_cell(w.coarse, xs.ptr(i)));
  }
}

TEST(AssignCell, Separability) {
  const auto& w = fixture::small();
  const auto xs = oracle::random_set(100, 16, 5);
  for (std::size_t n = 0; n < xs.count(); ++n) {
    for (std::uint32_t i = 0; i < 8; i += 3) {
      for (std::uint32_t j = 0; j < 8; j += 2) {
        const auto c = concat(w.coarse.book1.row(i), w.coarse.book2.row(j));
        const double joint = oracle::sq_dist(xs.ptr(n), c.data(), 16);
        const double split = oracle::sq_dist(xs.ptr(n), w.coarse.book1.centroid(i), 8) +
                             oracle::sq_dist(xs.ptr(n) + 8, w.coarse.book2.centroid(j), 8);
        EXPECT_LE(oracle::relative(split, joint), 1e-5);
      }
    }
  }
}

TEST(TrainFineGlobal, ZeroDisplacementsCollapse) {
  const auto pts = grid_points(4, 4, 20);
  const auto coarse = train_coarse(pts, 4, false);
  const auto fine = train_fine_global(pts, coarse, 4, 4);
  for (const auto& b : fine.books()) {
    for (float v : b.data()) EXPECT_EQ(v, 0.0f);
  }
  EXPECT_EQ(pq_mse(fine, displacements(coarse, pts)), 0.0);
}

TEST(TrainFineGlobal, DecodedDisplacementsNoLargerThanInputs) {
  // Codewords are cluster means, so decoding shrinks energy on average.
  const auto& w = fixture::small();
  const auto disp = displacements(w.coarse, w.learn);
  double in = 0.0, decoded = 0.0;
  for (std::size_t p = 0; p < disp.count(); ++p) {
    in += oracle::dot(disp.ptr(p), disp.ptr(p), 16);
    const auto y = pq_decode(w.fine, pq_encode(w.fine, disp.row(p)));
    decoded += oracle::dot(y.data(), y.data(), 16);
  }
  EXPECT_LT(decoded, in);
  EXPECT_GT(decoded, 0.0);
}

TEST(TrainFineGlobal, FineLayerReducesResidual) {
  const auto& w = fixture::small();
  const auto coarse_only = encoding_error("coarse", 0, coarse_only_scheme(w.coarse), w.learn, 16);
  const auto two_layer = encoding_error("global", 4, global_scheme(w.coarse, w.fine), w.learn, 16);
  EXPECT_LT(two_layer.mse, coarse_only.mse);
}

TEST(BuildIndex, EmptyBase) {
  const auto& w = fixture::small();
  const auto index = build_index(DenseVectorSet(16, 0), w.coarse, w.fine);
  EXPECT_EQ(index.size(), 0u);
  for (auto o : index.cells().offsets) EXPECT_EQ(o, 0u);
  EXPECT_TRUE(search_baseline(index, w.queries.row(0), 10, 5).neighbors.empty());
}

TEST(BuildIndex, SinglePointPlacement) {
  const auto& w = fixture::small();
  const auto x = concat(w.coarse.book1.row(2), w.coarse.book2.row(5));
  const auto index = build_index(DenseVectorSet(16, x), w.coarse, w.fine);
  const std::size_t t = 8;
  for (std::size_t c = 0; c <= t * t; ++c) {
    EXPECT_EQ(index.cells().offsets[c], c > 2 * t + 5 ? 1u : 0u) << c;
  }
}

TEST(BuildIndex, PartitionAndOrdering) {
  const auto& w = fixture::small();
  const auto& index = w.index;
  EXPECT_EQ(index.cells().total(), w.base.count());
  std::vector<int> seen(w.base.count(), 0);
  for (const auto& e : oracle::stored_entries(index.cells())) {
    const auto id = index.id_at(e.pos);
    ++seen[id];
    EXPECT_EQ(assign_cell(w.coarse, w.base.row(id)), e.cell);
    if (e.pos > index.cells().begin(e.cell)) { EXPECT_LT(index.id_at(e.pos - 1), id); }
    const auto code = pq_encode(w.fine, displacements(w.coarse, DenseVectorSet(16, std::vector<float>(
                                                                                      w.base.row(id).begin(),
                                                                                      w.base.row(id).end())))
                                             .row(0));
    for (std::size_t m = 0; m < 4; ++m) EXPECT_EQ(index.code_at(e.pos)[m], code[m]);
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(BuildIndex, TenThousandPointPartition) {
  const auto& w = fixture::small();
  const auto base = generate_clustered(50, 200, 16, 0.05f, 8);
  const auto index = build_index(base, w.coarse, w.fine);
  EXPECT_EQ(index.cells().total(), 10000u);
  std::size_t sum = 0;
  for (const auto& e : oracle::stored_entries(index.cells())) {
    ++sum;
    ASSERT_EQ(assign_cell(w.coarse, base.row(index.id_at(e.pos))), e.cell);
  }
  EXPECT_EQ(sum, 10000u);
}

TEST(BuildIndex, ThreadCountInvariant) {
  const auto& w = fixture::small();
  EXPECT_EQ(build_index(w.base, w.coarse, w.fine, 0, 1), build_index(w.base, w.coarse, w.fine, 0, 3));
}

TEST(BuildIndex, IdOffsetAndOverflow) {
  const auto& w = fixture::small();
  const auto index = build_index(w.base.head(10), w.coarse, w.fine, 1000);
  std::vector<std::uint32_t> ids(index.store().ids);
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(ids.front(), 1000u);
  EXPECT_EQ(ids.back(), 1009u);
  EXPECT_THROW(build_index(w.base.head(2), w.coarse, w.fine, 0xFFFFFFFFull), Error);
}

TEST(BuildIndex, DimensionMismatch) {
  const auto& w = fixture::small();
  EXPECT_THROW(build_index(oracle::random_set(3, 8, 1), w.coarse, w.fine), Error);
}

TEST(SearchBaseline, ExactlyEncodedPointFound) {
  const auto& w = fixture::small();
  PqCodec fine = w.fine;
  for (std::size_t m = 0; m < fine.num_parts(); ++m) std::fill_n(fine.book(m).centroid(0), fine.sub_dim(), 0.0f);
  DenseVectorSet base = w.base.head(500);
  const auto x = concat(w.coarse.book1.row(4), w.coarse.book2.row(6));
  base.push_back(x);
  const auto index = build_index(base, w.coarse, fine);
  const auto res = search_baseline(index, x, 1, 1);
  ASSERT_EQ(res.neighbors.size(), 1u);
  EXPECT_EQ(res.neighbors[0].id, 500u);
  EXPECT_EQ(res.neighbors[0].distance, 0.0f);

  // A query near the point gets its exact distance back.
  auto q = x;
  q[0] += 0.01f;
  q[9] -= 0.02f;
  const auto res2 = search_baseline(index, q, index.size(), index.size());
  for (const auto& n : res2.neighbors) {
    if (n.id == 500u) { EXPECT_LE(oracle::relative(n.distance, oracle::sq_dist(q, x)), 1e-4); }
  }
}

TEST(SearchBaseline, FullBudgetEqualsOracleRanking) {
  for (const auto* w : {&fixture::small(), &fixture::small_optimized()}) {
    const auto entries = oracle::stored_entries(w->index.cells());
    for (std::size_t qi = 0; qi < 10; ++qi) {
      const auto q = w->queries.row(qi);
      std::vector<oracle::Hit> all;
      for (const auto& e : entries) all.push_back({w->index.id_at(e.pos), oracle_entry_distance(w->index, e.pos, e.cell, q)});
      std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.distance < b.distance; });
      std::map<std::uint32_t, double> by_id;
      for (const auto& h : all) by_id[h.id] = h.distance;
      const auto res = search_baseline(w->index, q, w->base.count(), 50);
      EXPECT_EQ(res.candidates, w->base.count());
      ASSERT_EQ(res.neighbors.size(), 50u);
      for (std::size_t n = 0; n < 50; ++n) {
        EXPECT_LE(oracle::relative(res.neighbors[n].distance, all[n].distance, 1e-6), 1e-4) << n;
        EXPECT_LE(oracle::relative(res.neighbors[n].distance, by_id[res.neighbors[n].id], 1e-6), 1e-4) << n;
        if (n) { EXPECT_FALSE(neighbor_less(res.neighbors[n], res.neighbors[n - 1])); }
      }
    }
  }
}

TEST(SearchBaseline, RecallAboveChance) {
  const auto& w = fixture::small();
  const auto base = w.base.head(1000);
  const auto index = build_index(base, w.coarse, w.fine);
  const auto gt = brute_force_knn(base, w.queries, 1);
  std::size_t hits = 0;
  for (std::size_t q = 0; q < w.queries.count(); ++q) {
    hits += search_baseline(index, w.queries.row(q), base.count(), 1).neighbors[0].id == gt.nearest(q);
  }
  EXPECT_GT(double(hits) / double(w.queries.count()), 1.0 / 1000.0);
}

TEST(SearchBaseline, BudgetRules) {
  const auto& w = fixture::small();
  EXPECT_THROW(search_baseline(w.index, w.queries.row(0), 5, 10), Error);
  EXPECT_THROW(search_baseline(w.index, w.queries.row(0), 5, 0), Error);
  EXPECT_THROW(search_baseline(w.index, std::vector<float>(3), 5, 1), Error);
  // Whole cells: candidate count reaches l, and dropping the last visited
  // cell would fall short of it.
  for (std::size_t l : {1u, 37u, 500u, 3999u}) {
    const auto scan = scan_coarse(w.coarse, w.queries.row(1));
    const auto cells = collect_cells(w.index.cells(), scan, l);
    std::uint64_t total = 0;
    for (const auto& c : cells) {
      EXPECT_GT(c.end, c.begin);
      total += c.end - c.begin;
    }
    EXPECT_GE(total, l);
    EXPECT_LT(total - (cells.back().end - cells.back().begin), l);
  }
}

TEST(SearchBaseline, FewerCandidatesThanR) {
  const auto& w = fixture::small();
  const auto index = build_index(w.base.head(7), w.coarse, w.fine);
  const auto res = search_baseline(index, w.queries.row(0), 100, 100);
  EXPECT_EQ(res.neighbors.size(), 7u);
}

TEST(SearchBaseline, BudgetMonotonicity) {
  const auto& w = fixture::small();
  for (std::size_t q = 0; q < 10; ++q) {
    std::set<std::uint32_t> prev;
    for (std::size_t l : {1u, 10u, 100u, 400u, 1000u, 4000u}) {
      const auto cur = candidate_ids(w.index, w.queries.row(q), l);
      EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
      prev = cur;
    }
  }
}

// Recall at a fixed cutoff can dip as l grows: extra candidates may outrank
// the true neighbor under quantized distances. Coverage of the candidate set
// cannot.
TEST(SearchBaseline, RecallMonotoneInCutoffCoverageInBudget) {
  const auto& w = fixture::small();
  const auto queries = fixture::make_world({.queries = 1000}).queries;
  const auto gt = brute_force_knn(w.base, queries, 1);
  const auto engine = Engine::baseline(w.index);
  std::size_t prev_covered = 0;
  std::vector<Neighbor> cand;
  for (std::size_t l : {100u, 500u, 2000u, 4000u}) {
    const auto rep = evaluate(engine, queries, gt, l);
    for (std::size_t c = 1; c < 3; ++c) EXPECT_GE(rep.recall[c], rep.recall[c - 1]);
    std::size_t covered = 0;
    for (std::size_t q = 0; q < queries.count(); ++q) {
      cand.clear();
      engine.rerank(engine.prepare(queries.row(q), l), cand);
      for (const auto& n : cand) {
        if (n.id == gt.nearest(q)) {
          ++covered;
          break;
        }
      }
    }
    EXPECT_GE(covered, prev_covered) << l;
    // Anything ranked is a candidate.
    EXPECT_LE(rep.at(100), double(covered) / double(queries.count()));
    prev_covered = covered;
  }
  EXPECT_EQ(prev_covered, queries.count());
}

TEST(Reconstruct, MatchesOracleFrame) {
  const auto& w = fixture::small_optimized();
  const auto entries = oracle::stored_entries(w.index.cells());
  for (std::size_t n = 0; n < entries.size(); n += 97) {
    const auto x = reconstruct(w.index, entries[n].pos, entries[n].cell);
    // Distance to x in the original frame equals the rotated-frame distance.
    const auto q = w.queries.row(n % w.queries.count());
    EXPECT_LE(oracle::relative(oracle::sq_dist(q, x), oracle_entry_distance(w.index, entries[n].pos, entries[n].cell, q)),
              1e-4);
  }
}
