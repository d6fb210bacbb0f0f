#pragma once

// Recall@T, paired engine comparison, encoding error and single-thread
// timing.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "bpq/engine.hpp"
#include "bpq/vecio.hpp"

namespace bpq {

struct RecallReport {
  std::string engine;
  std::size_t l = 0;
  std::vector<std::size_t> cutoffs;
  std::vector<double> recall;  // parallel to cutoffs
  std::size_t num_queries = 0;
  double mean_query_ms = 0.0;
  double mean_candidates = 0.0;

  double at(std::size_t cutoff) const {
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      if (cutoffs[c] == cutoff) return recall[c];
    }
    throw Error(ErrorKind::range, "no recall recorded at cutoff " + std::to_string(cutoff));
  }
};

inline const std::vector<std::size_t>& default_cutoffs() {
  static const std::vector<std::size_t> cutoffs{1, 10, 100};
  return cutoffs;
}

/// Fraction of queries whose exact nearest neighbor appears among the first
/// c returned ids, for each cutoff c.
inline RecallReport recall_at(std::span<const std::vector<std::uint32_t>> results, const GroundTruth& gt,
                              std::span<const std::size_t> cutoffs) {
  if (gt.num_queries() < results.size()) {
    throw Error(ErrorKind::config, "ground truth covers " + std::to_string(gt.num_queries()) + " queries, results " +
                                       std::to_string(results.size()));
  }
  if (!std::is_sorted(cutoffs.begin(), cutoffs.end())) throw Error(ErrorKind::config, "cutoffs must be ascending");
  RecallReport rep;
  rep.cutoffs.assign(cutoffs.begin(), cutoffs.end());
  rep.recall.assign(cutoffs.size(), 0.0);
  rep.num_queries = results.size();
  if (results.empty()) return rep;
  for (std::size_t q = 0; q < results.size(); ++q) {
    const auto truth = gt.nearest(q);
    const auto& ids = results[q];
    const auto it = std::find(ids.begin(), ids.end(), truth);
    if (it == ids.end()) continue;
    const auto rank = static_cast<std::size_t>(it - ids.begin());
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      if (rank < cutoffs[c]) rep.recall[c] += 1.0;
    }
  }
  for (auto& v : rep.recall) v /= double(results.size());
  return rep;
}

inline std::vector<std::uint32_t> ids_of(const SearchResult& r) {
  std::vector<std::uint32_t> ids;
  ids.reserve(r.neighbors.size());
  for (const auto& n : r.neighbors) ids.push_back(n.id);
  return ids;
}

/// Runs every query and scores it. Returns r = max(cutoffs) results per query.
inline RecallReport evaluate(const Engine& engine, const DenseVectorSet& queries, const GroundTruth& gt, std::size_t l,
                             std::span<const std::size_t> cutoffs = default_cutoffs()) {
  const std::size_t r = cutoffs.empty() ? 1 : cutoffs.back();
  check_budget(l, r);
  std::vector<std::vector<std::uint32_t>> results(queries.count());
  double candidates = 0.0;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t q = 0; q < queries.count(); ++q) {
    const auto res = engine.search(queries.row(q), l, r);
    results[q] = ids_of(res);
    candidates += double(res.candidates);
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  auto rep = recall_at(results, gt, cutoffs);
  rep.engine = engine.name();
  rep.l = l;
  if (queries.count()) {
    rep.mean_query_ms = ms / double(queries.count());
    rep.mean_candidates = candidates / double(queries.count());
  }
  return rep;
}

struct EngineComparison {
  RecallReport first;
  RecallReport second;
  std::size_t shared_candidates = 0;
  double max_relative_deviation = 0.0;
  double mean_relative_deviation = 0.0;
  std::size_t candidate_set_mismatches = 0;  // queries whose candidate id sets differ
};

/// Relative gap between two evaluations of the same candidate distance,
/// floored at 1e-6 * ||q||^2 so that near-zero distances do not blow up.
inline double relative_deviation(float a, float b, float q_norm) {
  const double floor = std::max(1e-6 * double(q_norm), 1e-30);
  return std::abs(double(a) - double(b)) / std::max(std::abs(double(b)), floor);
}

/// Paired evaluation: recall for both engines plus distance deviation over
/// every candidate both engines rerank for the same query.
inline EngineComparison compare_engines(const Engine& a, const Engine& b, const DenseVectorSet& queries,
                                        const GroundTruth& gt, std::size_t l,
                                        std::span<const std::size_t> cutoffs = default_cutoffs()) {
  if (a.size() != b.size() || a.dim() != b.dim()) {
    throw Error(ErrorKind::config, "engines are built over different base sets");
  }
  EngineComparison cmp;
  cmp.first = evaluate(a, queries, gt, l, cutoffs);
  cmp.second = evaluate(b, queries, gt, l, cutoffs);
  double sum = 0.0;
  std::vector<Neighbor> ca, cb;
  for (std::size_t q = 0; q < queries.count(); ++q) {
    const auto pa = a.prepare(queries.row(q), l);
    const auto pb = b.prepare(queries.row(q), l);
    ca.clear();
    cb.clear();
    a.rerank(pa, ca);
    b.rerank(pb, cb);
    const float q_norm = norm_sqr(queries.ptr(q), queries.dim());
    std::unordered_map<std::uint32_t, float> by_id;
    by_id.reserve(cb.size());
    for (const auto& n : cb) by_id.emplace(n.id, n.distance);
    std::size_t shared = 0;
    for (const auto& n : ca) {
      const auto it = by_id.find(n.id);
      if (it == by_id.end()) continue;
      ++shared;
      const double dev = relative_deviation(n.distance, it->second, q_norm);
      cmp.max_relative_deviation = std::max(cmp.max_relative_deviation, dev);
      sum += dev;
    }
    if (shared != ca.size() || shared != cb.size()) ++cmp.candidate_set_mismatches;
    cmp.shared_candidates += shared;
  }
  if (cmp.shared_candidates) cmp.mean_relative_deviation = sum / double(cmp.shared_candidates);
  return cmp;
}

struct ErrorReport {
  std::string scheme;
  std::size_t code_bytes = 0;
  double mse = 0.0;
};

// Writes the reconstruction of its first argument into the second.
using Reconstructor = std::function<void(std::span<const float>, std::span<float>)>;

inline ErrorReport encoding_error(const std::string& scheme, std::size_t code_bytes, const Reconstructor& reconstruct,
                                  const DenseVectorSet& vectors, std::size_t dim) {
  check_dim(vectors.dim(), dim, "encoding_error");
  ErrorReport rep{scheme, code_bytes, 0.0};
  if (vectors.count() == 0) return rep;
  std::vector<float> out(vectors.dim());
  double total = 0.0;
  for (std::size_t i = 0; i < vectors.count(); ++i) {
    reconstruct(vectors.row(i), out);
    total += l2_sqr(vectors.ptr(i), out.data(), vectors.dim());
  }
  rep.mse = total / double(vectors.count());
  return rep;
}

inline Reconstructor identity_scheme() {
  return [](std::span<const float> x, std::span<float> out) { std::copy(x.begin(), x.end(), out.begin()); };
}

// Reconstruction by the cell centroid alone.
inline Reconstructor coarse_only_scheme(const CoarsePair& coarse) {
  return [&coarse](std::span<const float> x, std::span<float> out) {
    std::vector<float> buf, y(coarse.dim());
    const float* p = coarse.prepare(x.data(), buf);
    const CellId c = assign_cell_prepared(coarse, p);
    const std::size_t h = coarse.half_dim();
    std::copy_n(coarse.book1.centroid(c.i), h, y.data());
    std::copy_n(coarse.book2.centroid(c.j), h, y.data() + h);
    if (coarse.rotation) {
      coarse.rotation->apply_inverse(y.data(), out.data());
    } else {
      std::copy(y.begin(), y.end(), out.begin());
    }
  };
}

// Cell centroid plus the global-codebook PQ reconstruction of the displacement.
inline Reconstructor global_scheme(const CoarsePair& coarse, const PqCodec& fine) {
  return [&coarse, &fine](std::span<const float> x, std::span<float> out) {
    std::vector<float> buf, disp(coarse.dim());
    std::vector<std::uint8_t> code(fine.num_parts());
    const float* p = coarse.prepare(x.data(), buf);
    const CellId c = assign_cell_prepared(coarse, p);
    displacement(coarse, p, c, disp.data());
    pq_encode_bytes(fine, disp.data(), code.data());
    std::vector<float> y(coarse.dim());
    const std::size_t h = coarse.half_dim();
    const std::size_t sub = fine.sub_dim();
    for (std::size_t m = 0; m < fine.num_parts(); ++m) {
      std::copy_n(fine.book(m).centroid(code[m]), sub, y.data() + m * sub);
    }
    for (std::size_t k = 0; k < h; ++k) {
      y[k] += coarse.book1.centroid(c.i)[k];
      y[h + k] += coarse.book2.centroid(c.j)[k];
    }
    if (coarse.rotation) {
      coarse.rotation->apply_inverse(y.data(), out.data());
    } else {
      std::copy(y.begin(), y.end(), out.begin());
    }
  };
}

// Cell centroid plus the local-codebook reconstruction of the displacement.
inline Reconstructor hbpq_scheme(const CoarsePair& coarse, const LocalCodebookBank& bank) {
  return [&coarse, &bank](std::span<const float> x, std::span<float> out) {
    std::vector<float> buf, disp(coarse.dim());
    const float* p = coarse.prepare(x.data(), buf);
    const CellId c = assign_cell_prepared(coarse, p);
    displacement(coarse, p, c, disp.data());
    const auto code = hbpq_encode(bank, c.i, c.j, disp);
    auto y = hbpq_decode(bank, c.i, c.j, code);
    const std::size_t h = coarse.half_dim();
    for (std::size_t k = 0; k < h; ++k) {
      y[k] += coarse.book1.centroid(c.i)[k];
      y[h + k] += coarse.book2.centroid(c.j)[k];
    }
    if (coarse.rotation) {
      coarse.rotation->apply_inverse(y.data(), out.data());
    } else {
      std::copy(y.begin(), y.end(), out.begin());
    }
  };
}

struct Dispersion {
  double mean = 0.0;
  double median = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline Dispersion summarize(std::vector<double> samples) {
  Dispersion d;
  if (samples.empty()) return d;
  std::sort(samples.begin(), samples.end());
  d.min = samples.front();
  d.max = samples.back();
  d.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / double(samples.size());
  const std::size_t n = samples.size();
  d.median = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  double var = 0.0;
  for (double s : samples) var += (s - d.mean) * (s - d.mean);
  d.stddev = n > 1 ? std::sqrt(var / double(n - 1)) : 0.0;
  return d;
}

struct TimingReport {
  std::string engine;
  std::size_t l = 0;
  std::size_t r = 0;
  std::size_t repetitions = 0;
  Dispersion ms_per_query;
  double mean_candidates = 0.0;
  double lookups_per_candidate = 0.0;
  double flops_per_candidate = 0.0;
};

/// Wall-clock time per query over `repetitions` passes after one warm-up
/// pass, plus an instrumented pass for per-candidate operation counts.
/// Runs on the calling thread only.
inline TimingReport time_search(const Engine& engine, const DenseVectorSet& queries, std::size_t l, std::size_t r,
                                std::size_t repetitions) {
  check_budget(l, r);
  TimingReport rep{engine.name(), l, r, std::max<std::size_t>(repetitions, 1), {}, 0.0, 0.0, 0.0};
  if (queries.count() == 0) return rep;
  volatile float sink = 0.0f;
  for (std::size_t q = 0; q < queries.count(); ++q) {
    const auto res = engine.search(queries.row(q), l, r);
    if (!res.neighbors.empty()) sink = sink + res.neighbors[0].distance;
  }
  std::vector<double> samples;
  for (std::size_t rep_i = 0; rep_i < rep.repetitions; ++rep_i) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t q = 0; q < queries.count(); ++q) {
      const auto res = engine.search(queries.row(q), l, r);
      if (!res.neighbors.empty()) sink = sink + res.neighbors[0].distance;
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    samples.push_back(ms / double(queries.count()));
  }
  rep.ms_per_query = summarize(std::move(samples));
  OpCounter counter;
  for (std::size_t q = 0; q < queries.count(); ++q) engine.search(queries.row(q), l, r, counter);
  rep.mean_candidates = double(counter.candidates) / double(queries.count());
  rep.lookups_per_candidate = counter.lookups_per_candidate();
  rep.flops_per_candidate = counter.flops_per_candidate();
  return rep;
}

struct RerankTiming {
  std::string engine;
  std::size_t candidates_per_pass = 0;
  std::size_t repetitions = 0;
  Dispersion ns_per_candidate;
};

/// Times only candidate evaluation: queries are prepared up front, then the
/// rerank loop is run `repetitions` times over all of them.
inline RerankTiming rerank_throughput(const Engine& engine, const DenseVectorSet& queries, std::size_t l,
                                      std::size_t repetitions) {
  RerankTiming rep{engine.name(), 0, std::max<std::size_t>(repetitions, 1), {}};
  std::vector<PreparedQuery> prepared;
  prepared.reserve(queries.count());
  for (std::size_t q = 0; q < queries.count(); ++q) prepared.push_back(engine.prepare(queries.row(q), l));
  std::vector<Neighbor> out;
  for (const auto& p : prepared) {
    out.clear();
    engine.rerank(p, out);
    rep.candidates_per_pass += out.size();
  }
  if (rep.candidates_per_pass == 0) return rep;
  out.reserve(rep.candidates_per_pass);
  volatile float sink = 0.0f;
  std::vector<double> samples;
  for (std::size_t i = 0; i < rep.repetitions; ++i) {
    const auto start = std::chrono::steady_clock::now();
    for (const auto& p : prepared) {
      out.clear();
      engine.rerank(p, out);
      sink = sink + out.back().distance;
    }
    const double ns = std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - start).count();
    samples.push_back(ns / double(rep.candidates_per_pass));
  }
  rep.ns_per_candidate = summarize(std::move(samples));
  return rep;
}

inline nlohmann::json to_json(const RecallReport& r) {
  nlohmann::json j;
  j["record"] = "recall";
  j["engine"] = r.engine;
  j["l"] = r.l;
  j["queries"] = r.num_queries;
  for (std::size_t c = 0; c < r.cutoffs.size(); ++c) j["recall@" + std::to_string(r.cutoffs[c])] = r.recall[c];
  j["mean_query_ms"] = r.mean_query_ms;
  j["mean_candidates"] = r.mean_candidates;
  return j;
}

inline nlohmann::json to_json(const ErrorReport& e) {
  return {{"record", "encoding_error"}, {"scheme", e.scheme}, {"code_bytes", e.code_bytes}, {"mse", e.mse}};
}

inline nlohmann::json to_json(const TimingReport& t) {
  return {{"record", "timing"},
          {"engine", t.engine},
          {"l", t.l},
          {"r", t.r},
          {"repetitions", t.repetitions},
          {"mean_ms", t.ms_per_query.mean},
          {"median_ms", t.ms_per_query.median},
          {"stddev_ms", t.ms_per_query.stddev},
          {"mean_candidates", t.mean_candidates},
          {"lookups_per_candidate", t.lookups_per_candidate},
          {"flops_per_candidate", t.flops_per_candidate}};
}

inline nlohmann::json to_json(const EngineComparison& c) {
  return {{"record", "comparison"},
          {"first", to_json(c.first)},
          {"second", to_json(c.second)},
          {"shared_candidates", c.shared_candidates},
          {"max_relative_deviation", c.max_relative_deviation},
          {"mean_relative_deviation", c.mean_relative_deviation},
          {"candidate_set_mismatches", c.candidate_set_mismatches}};
}

// Plain-text form, one line per report.
inline void print_text(std::ostream& os, const RecallReport& r) {
  os << r.engine << " l=" << r.l;
  for (std::size_t c = 0; c < r.cutoffs.size(); ++c) os << " R@" << r.cutoffs[c] << "=" << r.recall[c];
  os << " ms/query=" << r.mean_query_ms << " candidates=" << r.mean_candidates << "\n";
}

inline void print_text(std::ostream& os, const TimingReport& t) {
  os << t.engine << " l=" << t.l << " r=" << t.r << " reps=" << t.repetitions << " mean_ms=" << t.ms_per_query.mean
     << " median_ms=" << t.ms_per_query.median << " stddev_ms=" << t.ms_per_query.stddev
     << " lookups/cand=" << t.lookups_per_candidate << " flops/cand=" << t.flops_per_candidate << "\n";
}

}  // namespace bpq
