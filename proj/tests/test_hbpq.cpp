#include <gtest/gtest.h>

#include <map>
#include <set>

#include "fixtures.hpp"

using namespace bpq;

namespace {

struct Local {
  LocalCodebookBank bank;
  HbpqIndex index;
};

const Local& local_small() {
  static const Local l = [] {
    const auto& w = fixture::small();
    Local out;
    out.bank = train_local_codebooks(w.learn, w.coarse, 4, 32, 128, w.fine, {15, 3, 1});
    out.index = build_hbpq_index(w.base, w.coarse, out.bank);
    return out;
  }();
  return l;
}

}  // namespace

TEST(LocalCodebooks, ZeroDisplacementsCollapse) {
  // Every point sits exactly on a cell centroid.
  const auto a = oracle::random_set(4, 4, 30);
  const auto b = oracle::random_set(4, 4, 31);
  DenseVectorSet pts(8, 0);
  for (int rep = 0; rep < 8; ++rep) {
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        std::vector<float> x(a.row(i).begin(), a.row(i).end());
        x.insert(x.end(), b.row(j).begin(), b.row(j).end());
        pts.push_back(x);
      }
    }
  }
  const auto coarse = train_coarse(pts, 4, false);
  const auto fine = train_fine_global(pts, coarse, 2, 4);
  const auto bank = train_local_codebooks(pts, coarse, 2, 4, 0, fine);
  for (const auto& book : bank.books()) {
    for (float v : book.data()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(LocalCodebooks, AdaptToAnisotropicCells) {
  // Two coarse regions per half with very different residual shapes.
  std::mt19937_64 rng(4);
  std::normal_distribution<float> g(0.0f, 1.0f);
  DenseVectorSet pts(4, 0);
  for (int n = 0; n < 4000; ++n) {
    const bool left = n % 2 == 0;
    const float cx = left ? -10.0f : 10.0f;
    std::vector<float> x{cx + (left ? 2.0f : 0.05f) * g(rng), (left ? 0.05f : 2.0f) * g(rng),
                         cx + (left ? 2.0f : 0.05f) * g(rng), (left ? 0.05f : 2.0f) * g(rng)};
    pts.push_back(x);
  }
  const auto coarse = train_coarse(pts, 2, false);
  const auto fine = train_fine_global(pts, coarse, 2, 8);
  const auto bank = train_local_codebooks(pts, coarse, 2, 8, 0, fine);
  EXPECT_NE(bank.book(0, 0, 0), bank.book(0, 1, 0));
  EXPECT_NE(bank.book(1, 0, 0), bank.book(1, 1, 0));
  EXPECT_NE(bank.book(0, 0, 0), fine.book(0));
  const auto local = encoding_error("local", 2, hbpq_scheme(coarse, bank), pts, 4);
  const auto global = encoding_error("global", 2, global_scheme(coarse, fine), pts, 4);
  EXPECT_LT(local.mse, 0.8 * global.mse);
}

TEST(LocalCodebooks, BankShapeAndElementCount) {
  const auto& bank = local_small().bank;
  EXPECT_EQ(bank.books().size(), 2u * 8u * 2u);
  EXPECT_EQ(bank.element_count(), 8u * 32u * 16u);
  EXPECT_EQ(bank.t(), 8u);
  EXPECT_EQ(bank.num_parts(), 4u);
  EXPECT_FALSE(bank.rotated());
}

TEST(LocalCodebooks, SparseCellsFallBackToGlobalBooks) {
  const auto& w = fixture::small();
  // Too few learn points for any codeword to reach K.
  const auto bank = train_local_codebooks(w.learn.head(100), w.coarse, 4, 32, 0, w.fine);
  for (std::size_t c = 0; c < 8; ++c) {
    for (std::size_t p = 0; p < 2; ++p) {
      EXPECT_EQ(bank.book(0, c, p), w.fine.book(p));
      EXPECT_EQ(bank.book(1, c, p), w.fine.book(2 + p));
    }
  }
}

TEST(LocalCodebooks, ConfigErrors) {
  const auto& w = fixture::small();
  EXPECT_THROW(train_local_codebooks(w.learn, w.coarse, 3, 32, 0, w.fine), Error);
  EXPECT_THROW(train_local_codebooks(w.learn, w.coarse, 4, 16, 0, w.fine), Error);
  EXPECT_THROW(train_local_codebooks(DenseVectorSet(16, 0), w.coarse, 4, 32, 0, w.fine), Error);
}

TEST(HbpqEncode, RoundTripOnCodewords) {
  const auto& bank = local_small().bank;
  std::mt19937_64 rng(5);
  for (int s = 0; s < 200; ++s) {
    const std::size_t i = rng() % 8, j = rng() % 8;
    PqCode code(4);
    for (auto& c : code) c = std::uint32_t(rng() % 32);
    const auto d = hbpq_decode(bank, i, j, code);
    const auto back = hbpq_encode(bank, i, j, d);
    // Duplicate centroids may map to an equal codeword with another index.
    EXPECT_EQ(hbpq_decode(bank, i, j, back), d);
  }
}

TEST(HbpqEncode, EachPartIsNearestInItsLocalBook) {
  const auto& bank = local_small().bank;
  const auto disp = oracle::random_set(300, 16, 6, -0.3f, 0.3f);
  std::mt19937_64 rng(7);
  for (std::size_t n = 0; n < disp.count(); ++n) {
    const std::size_t i = rng() % 8, j = rng() % 8;
    const auto code = hbpq_encode(bank, i, j, disp.row(n));
    for (std::size_t p = 0; p < 2; ++p) {
      const double got1 = oracle::sq_dist(disp.ptr(n) + 4 * p, bank.book(0, i, p).centroid(code[p]), 4);
      const double best1 = oracle::sq_dist(disp.ptr(n) + 4 * p,
                                           bank.book(0, i, p).centroid(oracle::nearest(bank.book(0, i, p), disp.ptr(n) + 4 * p)), 4);
      EXPECT_LE(got1, best1 + 1e-6);
      const double got2 = oracle::sq_dist(disp.ptr(n) + 8 + 4 * p, bank.book(1, j, p).centroid(code[2 + p]), 4);
      const double best2 = oracle::sq_dist(
          disp.ptr(n) + 8 + 4 * p, bank.book(1, j, p).centroid(oracle::nearest(bank.book(1, j, p), disp.ptr(n) + 8 + 4 * p)), 4);
      EXPECT_LE(got2, best2 + 1e-6);
    }
  }
}

TEST(HbpqEncode, TwoPartsUseCellBooks) {
  const auto& w = fixture::small();
  const auto fine = train_fine_global(w.learn, w.coarse, 2, 16, {10, 1, 1});
  const auto bank = train_local_codebooks(w.learn, w.coarse, 2, 16, 0, fine, {10, 2, 1});
  const auto disp = oracle::random_set(1, 16, 8, -0.3f, 0.3f);
  const auto code = hbpq_encode(bank, 3, 5, disp.row(0));
  ASSERT_EQ(code.size(), 2u);
  EXPECT_EQ(code[0], oracle::nearest(bank.book(0, 3, 0), disp.ptr(0)));
  EXPECT_EQ(code[1], oracle::nearest(bank.book(1, 5, 0), disp.ptr(0) + 8));
}

TEST(HbpqEncode, RangeErrors) {
  const auto& bank = local_small().bank;
  EXPECT_THROW(hbpq_encode(bank, 8, 0, std::vector<float>(16)), Error);
  EXPECT_THROW(hbpq_encode(bank, 0, 0, std::vector<float>(15)), Error);
  EXPECT_THROW(hbpq_decode(bank, 0, 0, PqCode{0, 0, 0, 32}), Error);
}

TEST(HbpqIndexBuild, SameCellLayoutAsGlobalIndex) {
  const auto& w = fixture::small();
  const auto& hi = local_small().index;
  EXPECT_EQ(hi.cells(), w.index.cells());
  EXPECT_EQ(hi.store().ids, w.index.store().ids);
  EXPECT_EQ(hi.size(), w.base.count());
  EXPECT_EQ(hi.bytes_per_point(), w.index.bytes_per_point());
}

TEST(HbpqIndexBuild, LocalErrorNotWorseThanGlobal) {
  const auto& w = fixture::small();
  const auto& bank = local_small().bank;
  const auto local = encoding_error("hbpq", 4, hbpq_scheme(w.coarse, bank), w.base, 16);
  const auto global = encoding_error("global", 4, global_scheme(w.coarse, w.fine), w.base, 16);
  EXPECT_LE(local.mse, global.mse);
}

TEST(SearchHbpq, ExactPointHasZeroDistance) {
  const auto& hi = local_small().index;
  const auto entries = oracle::stored_entries(hi.cells());
  for (std::size_t n = 0; n < entries.size(); n += 401) {
    const auto x = reconstruct(hi, entries[n].pos, entries[n].cell);
    const auto res = search_hbpq(hi, x, hi.size(), 1);
    ASSERT_EQ(res.neighbors.size(), 1u);
    EXPECT_NEAR(res.neighbors[0].distance, 0.0f, 1e-5);
  }
}

TEST(SearchHbpq, FullBudgetDistancesMatchReconstruction) {
  const auto& w = fixture::small();
  const auto& hi = local_small().index;
  std::map<std::uint32_t, std::vector<float>> recon;
  for (const auto& e : oracle::stored_entries(hi.cells())) recon[hi.id_at(e.pos)] = reconstruct(hi, e.pos, e.cell);
  for (std::size_t qi = 0; qi < 5; ++qi) {
    const auto q = w.queries.row(qi);
    const auto res = search_hbpq(hi, q, hi.size(), 30);
    for (const auto& n : res.neighbors) {
      const double want = oracle::sq_dist(q, recon[n.id]);
      EXPECT_LE(std::abs(n.distance - want), 1e-4 * std::max(1.0, want));
    }
  }
}

TEST(SearchHbpq, SameCandidatesAsBaseline) {
  const auto& w = fixture::small();
  const auto base = Engine::baseline(w.index);
  const auto local = Engine::hbpq(local_small().index);
  std::vector<Neighbor> ca, cb;
  for (std::size_t qi = 0; qi < 20; ++qi) {
    for (std::size_t l : {10u, 300u, 2000u}) {
      ca.clear();
      cb.clear();
      base.rerank(base.prepare(w.queries.row(qi), l), ca);
      local.rerank(local.prepare(w.queries.row(qi), l), cb);
      std::multiset<std::uint32_t> ia, ib;
      for (const auto& n : ca) ia.insert(n.id);
      for (const auto& n : cb) ib.insert(n.id);
      EXPECT_EQ(ia, ib);
      EXPECT_GE(ia.size(), l);
    }
  }
}

TEST(SearchHbpq, FewerCandidatesThanR) {
  const auto& w = fixture::small();
  const auto tiny = build_hbpq_index(w.base.head(7), w.coarse, local_small().bank);
  const auto res = search_hbpq(tiny, w.queries.row(0), 100, 100);
  EXPECT_EQ(res.candidates, 7u);
  EXPECT_EQ(res.neighbors.size(), 7u);
  EXPECT_THROW(search_hbpq(tiny, w.queries.row(0), 5, 10), Error);
}

TEST(SearchHbpq, RecallNotBelowBaseline) {
  const auto& w = fixture::small();
  const auto queries = fixture::make_world({.queries = 400}).queries;
  const auto gt = brute_force_knn(w.base, queries, 100);
  const auto a = evaluate(Engine::baseline(w.index), queries, gt, 1000);
  const auto b = evaluate(Engine::hbpq(local_small().index), queries, gt, 1000);
  EXPECT_GE(b.at(10), a.at(10) - 0.01);
  EXPECT_GE(b.at(100), a.at(100) - 0.01);
}

TEST(SearchHbpq, OptimizedHalvesWork) {
  const auto& w = fixture::small_optimized();
  LocalTrainOptions o;
  o.kmeans_iters = 10;
  o.optimized = true;
  o.opq_iters = 4;
  const auto bank = train_local_codebooks(w.learn, w.coarse, 4, 32, 0, w.fine, o);
  ASSERT_TRUE(bank.rotated());
  EXPECT_LE(bank.rotation(0)->orthogonality_error(), 1e-4);
  EXPECT_LE(bank.rotation(1)->orthogonality_error(), 1e-4);
  const auto hi = build_hbpq_index(w.base, w.coarse, bank);
  const auto entries = oracle::stored_entries(hi.cells());
  for (std::size_t n = 0; n < entries.size(); n += 333) {
    const auto x = reconstruct(hi, entries[n].pos, entries[n].cell);
    const auto q = w.queries.row(n % w.queries.count());
    const auto res = search_hbpq(hi, q, hi.size(), hi.size());
    for (const auto& nb : res.neighbors) {
      if (nb.id == hi.id_at(entries[n].pos)) {
        EXPECT_LE(std::abs(nb.distance - oracle::sq_dist(q, x)), 1e-3 * std::max(1.0, oracle::sq_dist(q, x)));
      }
    }
  }
  const auto local = encoding_error("hbpq", 4, hbpq_scheme(w.coarse, bank), w.base, 16);
  const auto global = encoding_error("global", 4, global_scheme(w.coarse, w.fine), w.base, 16);
  EXPECT_LE(local.mse, global.mse);
}
