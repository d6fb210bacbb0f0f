#pragma once

// Command-line front end: train, build, search, eval, info.
//
// Settings are resolved as defaults <- config file (flat key=value) <- flags.
// Every command validates its settings and inputs before writing anything,
// and all outputs go through write_file_atomic.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bpq/bpq.hpp"

namespace bpq::cli {

struct RunConfig {
  std::string learn, base, query, gt, index, model;
  std::string compare, compare_index;
  std::string vector;  // inline query, comma separated
  std::size_t t = 1024;
  std::size_t m = 8;
  std::size_t k = 256;
  std::size_t l = 10000;
  std::size_t r = 100;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::size_t limit = 0;       // 0 = no limit
  std::size_t min_points = 0;  // 0 = 4*k
  std::size_t kmeans_iters = 25;
  std::size_t opq_iters = 10;
  std::size_t reps = 0;  // eval: timing repetitions, 0 = no timing
  bool optimized = false;
  bool json = false;
  std::optional<EngineKind> engine;

  std::size_t effective_min_points() const { return min_points ? min_points : 4 * k; }
};

using Settings = std::map<std::string, std::string>;

inline const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys{
      "learn", "base",         "query",     "gt",   "index",     "model",   "compare", "compare_index",
      "vector", "t",           "m",         "k",    "l",         "r",       "seed",    "threads",
      "limit", "min_points",   "kmeans_iters", "opq_iters", "reps", "optimized", "json", "engine"};
  return keys;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline Settings parse_config_text(const std::string& text, const std::string& origin) {
  Settings out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::config, origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    auto key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '-', '_');
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

inline Settings read_config_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_config_text(std::string(bytes.begin(), bytes.end()), path.string());
}

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (value.empty() || res.ec != std::errc() || res.ptr != end) {
    throw Error(ErrorKind::config, "invalid value for " + key + ": '" + value + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  throw Error(ErrorKind::config, "invalid value for " + key + ": '" + value + "'");
}

}  // namespace detail

inline RunConfig resolve_config(const Settings& s) {
  RunConfig c;
  for (const auto& [key, value] : s) {
    if (std::find(known_keys().begin(), known_keys().end(), key) == known_keys().end()) {
      throw Error(ErrorKind::config, "unknown config key '" + key + "'");
    }
    using detail::parse_number;
    if (key == "learn") c.learn = value;
    else if (key == "base") c.base = value;
    else if (key == "query") c.query = value;
    else if (key == "gt") c.gt = value;
    else if (key == "index") c.index = value;
    else if (key == "model") c.model = value;
    else if (key == "compare") c.compare = value;
    else if (key == "compare_index") c.compare_index = value;
    else if (key == "vector") c.vector = value;
    else if (key == "t") c.t = parse_number<std::size_t>(key, value);
    else if (key == "m") c.m = parse_number<std::size_t>(key, value);
    else if (key == "k") c.k = parse_number<std::size_t>(key, value);
    else if (key == "l") c.l = parse_number<std::size_t>(key, value);
    else if (key == "r") c.r = parse_number<std::size_t>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "threads") c.threads = parse_number<unsigned>(key, value);
    else if (key == "limit") c.limit = parse_number<std::size_t>(key, value);
    else if (key == "min_points") c.min_points = parse_number<std::size_t>(key, value);
    else if (key == "kmeans_iters") c.kmeans_iters = parse_number<std::size_t>(key, value);
    else if (key == "opq_iters") c.opq_iters = parse_number<std::size_t>(key, value);
    else if (key == "reps") c.reps = parse_number<std::size_t>(key, value);
    else if (key == "optimized") c.optimized = detail::parse_bool(key, value);
    else if (key == "json") c.json = detail::parse_bool(key, value);
    else if (key == "engine") c.engine = parse_engine(value);
  }
  if (c.threads == 0) throw Error(ErrorKind::config, "threads must be at least 1");
  if (c.kmeans_iters == 0) throw Error(ErrorKind::config, "kmeans_iters must be at least 1");
  return c;
}

inline void require_path(const std::string& value, const char* key) {
  if (value.empty()) throw Error(ErrorKind::config, std::string("missing required setting '") + key + "'");
}

inline void require_file(const std::string& value, const char* key) {
  require_path(value, key);
  if (!std::filesystem::is_regular_file(value)) {
    throw Error(ErrorKind::io, std::string(key) + " file not found: " + value);
  }
}

// Shape checks that need no data.
inline void validate_training_params(const RunConfig& c) {
  if (c.t == 0) throw Error(ErrorKind::config, "t must be positive");
  if (c.m == 0 || c.m % 2 != 0) {
    throw Error(ErrorKind::config, "m must be even (got " + std::to_string(c.m) + ")");
  }
  if (c.m > 16) throw Error(ErrorKind::config, "m must be at most 16");
  if (c.k == 0 || c.k > 256) throw Error(ErrorKind::config, "k must be in [1, 256]");
}

inline std::optional<std::size_t> limit_of(const RunConfig& c) {
  return c.limit ? std::optional<std::size_t>(c.limit) : std::nullopt;
}

struct ModelPaths {
  std::filesystem::path coarse, fine, bank;
};

inline ModelPaths model_paths(const std::string& prefix) {
  return {prefix + ".coarse", prefix + ".fine", prefix + ".bank"};
}

inline int cmd_train(const RunConfig& c, std::ostream& out) {
  validate_training_params(c);
  require_file(c.learn, "learn");
  require_path(c.model, "model");
  const auto learn = read_vectors(c.learn, format_from_path(c.learn), limit_of(c));
  if (learn.dim() % c.m != 0 || learn.dim() % 2 != 0) {
    throw Error(ErrorKind::config, "m=" + std::to_string(c.m) + " does not divide the even dimension " +
                                       std::to_string(learn.dim()));
  }
  const bool hbpq = c.engine == EngineKind::hbpq;
  const auto paths = model_paths(c.model);

  CoarseTrainOptions co{c.kmeans_iters, c.opq_iters, c.seed, c.threads};
  const auto coarse = train_coarse(learn, c.t, c.optimized, co);
  FineTrainOptions fo{c.kmeans_iters, c.seed + 101, c.threads};
  const auto fine = train_fine_global(learn, coarse, c.m, c.k, fo);
  std::optional<LocalCodebookBank> bank;
  if (hbpq) {
    LocalTrainOptions lo;
    lo.kmeans_iters = c.kmeans_iters;
    lo.seed = c.seed + 202;
    lo.threads = c.threads;
    lo.optimized = c.optimized;
    lo.opq_iters = c.opq_iters;
    bank = train_local_codebooks(learn, coarse, c.m, c.k, c.effective_min_points(), fine, lo);
  }

  save_coarse(coarse, paths.coarse);
  save_codec(fine, paths.fine);
  if (bank) save_bank(*bank, paths.bank);
  out << "trained D=" << learn.dim() << " T=" << c.t << " M=" << c.m << " K=" << c.k
      << " optimized=" << (c.optimized ? 1 : 0) << " learn=" << learn.count() << "\n";
  out << "wrote " << paths.coarse.string() << " " << paths.fine.string();
  if (bank) out << " " << paths.bank.string();
  out << "\n";
  return 0;
}

inline int cmd_build(const RunConfig& c, std::ostream& out) {
  require_file(c.base, "base");
  require_path(c.model, "model");
  require_path(c.index, "index");
  const auto paths = model_paths(c.model);
  const bool hbpq = c.engine == EngineKind::hbpq;
  if (!std::filesystem::is_regular_file(paths.coarse)) {
    throw Error(ErrorKind::io, "coarse codebooks not found: " + paths.coarse.string());
  }
  if (!hbpq && !std::filesystem::is_regular_file(paths.fine)) {
    throw Error(ErrorKind::io, "fine codebooks not found: " + paths.fine.string());
  }
  if (hbpq && !std::filesystem::is_regular_file(paths.bank)) {
    throw Error(ErrorKind::io, "local codebook bank not found: " + paths.bank.string());
  }
  const auto coarse = load_coarse(paths.coarse);
  const auto base = read_vectors(c.base, format_from_path(c.base), limit_of(c));
  if (base.dim() != coarse.dim()) {
    throw Error(ErrorKind::dimension, "base dimension " + std::to_string(base.dim()) +
                                          " does not match codebook dimension " + std::to_string(coarse.dim()));
  }
  std::size_t n = 0, populated = 0, bpp = 0;
  if (hbpq) {
    const auto bank = load_bank(paths.bank);
    const auto index = build_hbpq_index(base, coarse, bank, 0, c.threads);
    save_index(index, c.index);
    n = index.size();
    populated = index.cells().populated();
    bpp = index.bytes_per_point();
  } else {
    const auto fine = load_codec(paths.fine);
    const auto index = build_index(base, coarse, fine, 0, c.threads);
    save_index(index, c.index);
    n = index.size();
    populated = index.cells().populated();
    bpp = index.bytes_per_point();
  }
  out << "N=" << n << " populated_cells=" << populated << " bytes_per_point=" << bpp << "\n";
  return 0;
}

/// An index loaded from disk plus whatever an engine needs on top of it.
struct LoadedIndex {
  AnyIndex index;
  std::optional<FbpqTables> tables;

  bool is_hbpq() const { return std::holds_alternative<HbpqIndex>(index); }
  std::size_t size() const {
    return std::visit([](const auto& ix) { return ix.size(); }, index);
  }
  std::size_t dim() const {
    return std::visit([](const auto& ix) { return ix.params().dim; }, index);
  }

  Engine engine(EngineKind kind) {
    if (kind == EngineKind::hbpq) {
      if (!is_hbpq()) throw Error(ErrorKind::config, "engine hbpq needs an index built with local codebooks");
      return Engine::hbpq(std::get<HbpqIndex>(index));
    }
    if (is_hbpq()) {
      throw Error(ErrorKind::config, std::string("engine ") + to_string(kind) +
                                         " is incompatible with an hbpq index (it has no global fine codebooks)");
    }
    const auto& mi = std::get<MultiIndex>(index);
    if (kind == EngineKind::baseline) return Engine::baseline(mi);
    if (!tables) tables = build_tables(mi);
    return Engine::fbpq(mi, *tables);
  }

  EngineKind default_engine() const { return is_hbpq() ? EngineKind::hbpq : EngineKind::baseline; }
};

// Engine compatibility is checked from the header alone, before the body is read.
inline void check_engine_compat(const IndexHeader& h, EngineKind kind) {
  if (kind == EngineKind::hbpq && !h.hbpq()) {
    throw Error(ErrorKind::config, "engine hbpq needs an index built with local codebooks");
  }
  if (kind != EngineKind::hbpq && h.hbpq()) {
    throw Error(ErrorKind::config, std::string("engine ") + to_string(kind) +
                                       " is incompatible with an hbpq index (it has no global fine codebooks)");
  }
}

inline DenseVectorSet parse_inline_vector(const std::string& text) {
  std::vector<float> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    float v = 0.0f;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw Error(ErrorKind::format, "invalid component in inline vector: '" + item + "'");
    }
    values.push_back(v);
  }
  if (values.empty()) throw Error(ErrorKind::empty, "empty input");
  const std::size_t d = values.size();
  return DenseVectorSet(d, std::move(values));
}

inline DenseVectorSet load_queries(const RunConfig& c) {
  if (!c.vector.empty()) return parse_inline_vector(c.vector);
  require_file(c.query, "query");
  return read_vectors(c.query, format_from_path(c.query), limit_of(c));
}

inline int cmd_search(const RunConfig& c, std::ostream& out) {
  check_budget(c.l, c.r);
  require_file(c.index, "index");
  if (c.vector.empty()) require_file(c.query, "query");
  const auto header = read_index_header(c.index);
  const EngineKind kind = c.engine.value_or(header.hbpq() ? EngineKind::hbpq : EngineKind::baseline);
  check_engine_compat(header, kind);
  const auto queries = load_queries(c);
  check_dim(queries.dim(), header.params.dim, "query");
  LoadedIndex loaded{load_any_index(c.index), std::nullopt};
  const Engine engine = loaded.engine(kind);
  for (std::size_t q = 0; q < queries.count(); ++q) {
    if (queries.count() > 1) out << "# query " << q << "\n";
    const auto res = engine.search(queries.row(q), c.l, c.r);
    for (std::size_t rank = 0; rank < res.neighbors.size(); ++rank) {
      out << rank + 1 << " " << res.neighbors[rank].id << " " << res.neighbors[rank].distance << "\n";
    }
  }
  return 0;
}

inline int cmd_eval(const RunConfig& c, std::ostream& out) {
  require_file(c.index, "index");
  require_file(c.query, "query");
  const std::vector<std::size_t> cutoffs = default_cutoffs();
  if (c.l < 1) throw Error(ErrorKind::config, "l must be at least 1");
  if (c.gt.empty() && c.base.empty()) {
    throw Error(ErrorKind::config, "eval needs ground truth (gt) or a base set to compute it");
  }
  if (!c.gt.empty()) require_file(c.gt, "gt");
  if (!c.base.empty()) require_file(c.base, "base");
  const auto header = read_index_header(c.index);
  const EngineKind kind = c.engine.value_or(header.hbpq() ? EngineKind::hbpq : EngineKind::baseline);
  check_engine_compat(header, kind);
  std::optional<EngineKind> other_kind;
  std::optional<IndexHeader> other_header;
  if (!c.compare.empty()) {
    other_kind = parse_engine(c.compare);
    const std::string other_path = c.compare_index.empty() ? c.index : c.compare_index;
    require_file(other_path, "compare_index");
    other_header = read_index_header(other_path);
    check_engine_compat(*other_header, *other_kind);
  }

  const auto queries = read_vectors(c.query, format_from_path(c.query), limit_of(c));
  check_dim(queries.dim(), header.params.dim, "query");
  GroundTruth gt;
  if (!c.gt.empty()) {
    gt = read_ground_truth(c.gt);
    if (gt.num_queries() < queries.count()) {
      throw Error(ErrorKind::config, "ground truth covers " + std::to_string(gt.num_queries()) + " of " +
                                         std::to_string(queries.count()) + " queries");
    }
  } else {
    const auto base = read_vectors(c.base, format_from_path(c.base));
    check_dim(base.dim(), header.params.dim, "base");
    gt = brute_force_knn(base, queries, std::min<std::size_t>(cutoffs.back(), base.count()), c.threads);
  }

  LoadedIndex loaded{load_any_index(c.index), std::nullopt};
  const Engine engine = loaded.engine(kind);
  auto emit = [&](const auto& report) {
    if (c.json) {
      out << to_json(report).dump() << "\n";
    } else {
      print_text(out, report);
    }
  };
  if (!other_kind) {
    emit(evaluate(engine, queries, gt, c.l, cutoffs));
  } else {
    std::optional<LoadedIndex> other_loaded;
    LoadedIndex* other = &loaded;
    if (!c.compare_index.empty() && c.compare_index != c.index) {
      other_loaded.emplace(LoadedIndex{load_any_index(c.compare_index), std::nullopt});
      other = &*other_loaded;
    }
    const Engine second = other->engine(*other_kind);
    const auto cmp = compare_engines(engine, second, queries, gt, c.l, cutoffs);
    if (c.json) {
      out << to_json(cmp).dump() << "\n";
    } else {
      print_text(out, cmp.first);
      print_text(out, cmp.second);
      out << "shared_candidates=" << cmp.shared_candidates << " max_rel_dev=" << cmp.max_relative_deviation
          << " mean_rel_dev=" << cmp.mean_relative_deviation << "\n";
    }
  }
  if (c.reps > 0) emit(time_search(engine, queries, c.l, std::min(c.l, cutoffs.back()), c.reps));
  return 0;
}

inline int cmd_info(const RunConfig& c, std::ostream& out) {
  require_file(c.index, "index");
  const auto bytes = read_file_bytes(c.index);
  const auto h = parse_index_header(bytes);
  const auto any = deserialize_any_index(bytes);
  const auto& p = h.params;
  out << "version " << h.version << "\n";
  out << "D " << p.dim << "\nT " << p.t << "\nM " << p.m << "\nK " << p.k << "\n";
  out << "optimized " << (h.optimized() ? 1 : 0) << "\n";
  out << "hbpq " << (h.hbpq() ? 1 : 0) << "\n";
  out << "half_rotations " << (h.half_rotations() ? 1 : 0) << "\n";
  out << "N " << h.count << "\n";
  const auto& cells = std::visit([](const auto& ix) -> const CellTable& { return ix.cells(); }, any);
  out << "cells " << cells.num_cells() << "\npopulated_cells " << cells.populated() << "\n";
  out << "bytes_per_point " << (sizeof(std::uint32_t) + p.m) << "\n";
  if (const auto* mi = std::get_if<MultiIndex>(&any)) {
    const auto tables = build_tables(*mi);
    out << "fbpq_cross_elements " << tables.cross1.size() + tables.cross2.size() << "\n";
    out << "fbpq_norm_elements " << tables.coarse_norms.size() + tables.fine_norms.size() << "\n";
    out << "fbpq_table_elements " << tables.element_count() << "\n";
  } else {
    const auto& bank = std::get<HbpqIndex>(any).bank();
    out << "bank_books " << bank.books().size() << "\n";
    out << "bank_elements " << bank.element_count() << "\n";
  }
  return 0;
}

/// Runs one command line (without the program name) and returns the exit
/// status. Errors become a single "error: <category>: <message>" line.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"bilayer product quantization search"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Settings flags;
  std::string config_path;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key=value config file");
    auto opt = [&](const std::string& name, const std::string& key, const std::string& help) {
      sub->add_option_function<std::string>(
          name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
    };
    opt("--engine", "engine", "baseline, fbpq or hbpq");
    opt("--l", "l", "candidate budget");
    opt("--r", "r", "result count");
    opt("--t", "t", "coarse codebook size per half");
    opt("--m", "m", "fine parts");
    opt("--k", "k", "fine codebook size");
    opt("--seed", "seed", "random seed");
    opt("--threads", "threads", "worker threads");
    opt("--limit", "limit", "read at most this many vectors");
    opt("--min-points", "min_points", "points needed for a fully trained local codebook");
    opt("--kmeans-iters", "kmeans_iters", "Lloyd iterations");
    opt("--opq-iters", "opq_iters", "OPQ outer iterations");
    opt("--learn", "learn", "learn set");
    opt("--base", "base", "base set");
    opt("--query", "query", "query set");
    opt("--vector", "vector", "single inline query, comma separated");
    opt("--gt", "gt", "ground truth (.ivecs)");
    opt("--index", "index", "index file");
    opt("--model", "model", "codebook file prefix");
    opt("--compare", "compare", "second engine for a paired evaluation");
    opt("--compare-index", "compare_index", "index for the second engine");
    opt("--reps", "reps", "timing repetitions");
    sub->add_flag_callback("--optimized", [&flags] { flags["optimized"] = "1"; }, "learn rotations (OPQ)");
    sub->add_flag_callback("--json", [&flags] { flags["json"] = "1"; }, "emit JSON lines");
  };

  using Command = int (*)(const RunConfig&, std::ostream&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands{
      {"train", "learn coarse, fine and local codebooks", cmd_train},
      {"build", "encode a base set into an index file", cmd_build},
      {"search", "query an index", cmd_search},
      {"eval", "recall, paired comparison and timing", cmd_eval},
      {"info", "print index header and memory accounting", cmd_info},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help, fn] : commands) {
    subs.push_back(app.add_subcommand(name, help));
    add_common(subs.back());
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: config: " << e.what() << "\n";
    return 2;
  }

  try {
    Settings settings;
    if (!config_path.empty()) settings = read_config_file(config_path);
    for (const auto& [key, value] : flags) settings[key] = value;
    const RunConfig config = resolve_config(settings);
    for (std::size_t s = 0; s < subs.size(); ++s) {
      if (subs[s]->parsed()) return std::get<2>(commands[s])(config, out);
    }
    err << "error: config: no command given\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace bpq::cli
