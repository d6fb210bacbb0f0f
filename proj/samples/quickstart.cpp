// Minimal end-to-end run: synthetic data, train, build, search with all
// three engines, print recall. K=64 keeps every local codebook trainable
// from 8000 learn points.
#include <iostream>

#include "bpq/bpq.hpp"

int main() {
  using namespace bpq;
  const ClusterMixture mix(64, 32, 8, 0.3f, 0.8f, 0.01f, 7);
  const auto learn = mix.sample(8000, 1);
  const auto base = mix.sample(20000, 2);
  const auto queries = mix.sample(200, 3);
  const auto gt = brute_force_knn(base, queries, 100);

  const auto coarse = train_coarse(learn, 16, false);
  const auto fine = train_fine_global(learn, coarse, 8, 64);
  const auto index = build_index(base, coarse, fine);
  const auto tables = build_tables(index);

  const auto bank = train_local_codebooks(learn, coarse, 8, 64, 256, fine);
  const auto hindex = build_hbpq_index(base, coarse, bank);

  for (const auto& engine : {Engine::baseline(index), Engine::fbpq(index, tables), Engine::hbpq(hindex)}) {
    print_text(std::cout, evaluate(engine, queries, gt, 2000));
  }
}
