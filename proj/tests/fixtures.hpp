#pragma once

// Small trained pipelines shared by several test files. Built once per
// process and reused read-only.

#include "oracles.hpp"

namespace fixture {

struct World {
  bpq::DenseVectorSet learn, base, queries;
  bpq::CoarsePair coarse;
  bpq::PqCodec fine;
  bpq::MultiIndex index;
  bpq::FbpqTables tables;
};

struct WorldSpec {
  std::size_t dim = 16;
  std::size_t t = 8;
  std::size_t m = 4;
  std::size_t k = 32;
  std::size_t clusters = 40;
  std::size_t learn = 3000;
  std::size_t base = 4000;
  std::size_t queries = 50;
  bool optimized = false;
  std::uint64_t seed = 1;
};

inline World make_world(const WorldSpec& s) {
  const bpq::ClusterMixture mix(s.clusters, s.dim, std::max<std::size_t>(2, s.dim / 4), 0.08f, 0.7f, 0.005f, s.seed);
  World w;
  w.learn = mix.sample(s.learn, s.seed + 1);
  w.base = mix.sample(s.base, s.seed + 2);
  w.queries = mix.sample(s.queries, s.seed + 3);
  bpq::CoarseTrainOptions co;
  co.kmeans_iters = 15;
  co.opq_iters = 5;
  co.seed = s.seed;
  w.coarse = bpq::train_coarse(w.learn, s.t, s.optimized, co);
  w.fine = bpq::train_fine_global(w.learn, w.coarse, s.m, s.k, {15, s.seed + 5, 1});
  w.index = bpq::build_index(w.base, w.coarse, w.fine);
  w.tables = bpq::build_tables(w.index);
  return w;
}

inline const World& small() {
  static const World w = make_world({});
  return w;
}

inline const World& small_optimized() {
  static const World w = [] {
    WorldSpec s;
    s.optimized = true;
    s.seed = 2;
    return make_world(s);
  }();
  return w;
}

}  // namespace fixture
