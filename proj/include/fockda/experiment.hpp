#pragma once

// Predator-prey assimilation experiment: truth simulation, noisy census,
// assimilation cycles, log-score metrics and file outputs.
//
// Stages exchange data through JSON-lines files so they can run separately:
//   simulate    -> trajectory.jsonl, observations.jsonl
//   assimilate  -> posterior.jsonl, runlog.jsonl
//   evaluate    -> metrics.csv, snapshot_<cycle>.csv

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fockda/assimilator.hpp"
#include "fockda/deselby.hpp"
#include "fockda/grid_model.hpp"
#include "fockda/world_sim.hpp"

namespace fockda {

using Json = nlohmann::json;

struct ExperimentConfig {
  PredatorPreyModel model;
  double lambda_prey = 0.06;
  double lambda_pred = 0.03;
  double p_observe = 0.02;
  double p_detect = 0.9;
  double window = 0.5;
  int cycles = 32;
  std::vector<std::uint64_t> seeds{1};
  double rel_tol = 0.002;
  int max_order = 12;
  std::optional<int> prune_hops = 4;
  std::size_t max_terms = 8'000'000;
  unsigned threads = 0;
  /// Write a grid snapshot every this many cycles (0 disables).
  int snapshot_every = 1;
  std::string out_dir = "out";

  void validate() const {
    const auto& r = model.rates;
    for (double v : {r.prey_death, r.prey_reproduction, r.prey_move, r.predator_death, r.predation,
                     r.predator_move, lambda_prey, lambda_pred, window}) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("rates, priors and window must be >= 0");
    }
    if (!(p_observe >= 0.0 && p_observe <= 1.0)) throw std::invalid_argument("p_observe must lie in [0, 1]");
    if (!(p_detect > 0.0 && p_detect <= 1.0)) throw std::invalid_argument("p_detect must lie in (0, 1]");
    if (cycles < 1) throw std::invalid_argument("cycles must be >= 1");
    if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
    if (model.grid.width == 0 || model.grid.height == 0) throw std::invalid_argument("grid must be non-empty");
    if (!(rel_tol > 0.0)) throw std::invalid_argument("rel_tol must be positive");
    if (max_order < 0) throw std::invalid_argument("max_order must be >= 0");
    if (prune_hops && *prune_hops < 0) throw std::invalid_argument("prune_hops must be >= 0");
    if (snapshot_every < 0) throw std::invalid_argument("snapshot_every must be >= 0");
  }

  AssimilationOptions assimilation_options() const {
    AssimilationOptions o;
    o.rel_tol = rel_tol;
    o.max_order = max_order;
    o.prune_hops = prune_hops;
    o.max_terms = max_terms;
    o.threads = threads;
    return o;
  }

  DeselbyState prior() const {
    std::vector<double> l(model.grid.num_states());
    for (std::uint32_t i = 0; i < l.size(); ++i) l[i] = i % 2 == 0 ? lambda_prey : lambda_pred;
    return DeselbyState::ground(std::move(l));
  }
};

inline ExperimentConfig config_from_json(const Json& j) {
  static const char* const kKnown[] = {
      "width", "height", "boundary", "rate_split", "predation_outcome", "prey_death",
      "prey_reproduction", "prey_move", "predator_death", "predation", "predator_move",
      "lambda_prey", "lambda_pred", "p_observe", "p_detect", "window", "cycles", "seeds",
      "rel_tol", "max_order", "prune_hops", "max_terms", "threads", "snapshot_every", "out_dir"};
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      throw std::invalid_argument("unknown config field: " + key);
    }
  }
  ExperimentConfig c;
  auto& g = c.model.grid;
  auto& r = c.model.rates;
  g.width = j.value("width", g.width);
  g.height = j.value("height", g.height);
  if (j.contains("boundary")) g.boundary = parse_boundary(j["boundary"].get<std::string>());
  if (j.contains("rate_split")) c.model.split = parse_rate_split(j["rate_split"].get<std::string>());
  if (j.contains("predation_outcome")) {
    c.model.outcome = parse_predation_outcome(j["predation_outcome"].get<std::string>());
  }
  r.prey_death = j.value("prey_death", r.prey_death);
  r.prey_reproduction = j.value("prey_reproduction", r.prey_reproduction);
  r.prey_move = j.value("prey_move", r.prey_move);
  r.predator_death = j.value("predator_death", r.predator_death);
  r.predation = j.value("predation", r.predation);
  r.predator_move = j.value("predator_move", r.predator_move);
  c.lambda_prey = j.value("lambda_prey", c.lambda_prey);
  c.lambda_pred = j.value("lambda_pred", c.lambda_pred);
  c.p_observe = j.value("p_observe", c.p_observe);
  c.p_detect = j.value("p_detect", c.p_detect);
  c.window = j.value("window", c.window);
  c.cycles = j.value("cycles", c.cycles);
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  c.rel_tol = j.value("rel_tol", c.rel_tol);
  c.max_order = j.value("max_order", c.max_order);
  if (j.contains("prune_hops")) {
    if (j["prune_hops"].is_null()) {
      c.prune_hops.reset();
    } else {
      c.prune_hops = j["prune_hops"].get<int>();
    }
  }
  c.max_terms = j.value("max_terms", c.max_terms);
  c.threads = j.value("threads", c.threads);
  c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.validate();
  return c;
}

inline Json config_to_json(const ExperimentConfig& c) {
  const auto& g = c.model.grid;
  const auto& r = c.model.rates;
  return Json{{"width", g.width},
              {"height", g.height},
              {"boundary", to_string(g.boundary)},
              {"rate_split", to_string(c.model.split)},
              {"predation_outcome", to_string(c.model.outcome)},
              {"prey_death", r.prey_death},
              {"prey_reproduction", r.prey_reproduction},
              {"prey_move", r.prey_move},
              {"predator_death", r.predator_death},
              {"predation", r.predation},
              {"predator_move", r.predator_move},
              {"lambda_prey", c.lambda_prey},
              {"lambda_pred", c.lambda_pred},
              {"p_observe", c.p_observe},
              {"p_detect", c.p_detect},
              {"window", c.window},
              {"cycles", c.cycles},
              {"seeds", c.seeds},
              {"rel_tol", c.rel_tol},
              {"max_order", c.max_order},
              {"prune_hops", c.prune_hops ? Json(*c.prune_hops) : Json(nullptr)},
              {"max_terms", c.max_terms},
              {"threads", c.threads},
              {"snapshot_every", c.snapshot_every},
              {"out_dir", c.out_dir}};
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return config_from_json(Json::parse(in));
}

// ---------------------------------------------------------------------------
// Scores

inline const double kScoreFloor = std::log2(1e-300);

struct Score {
  double bits = 0.0;
  std::size_t floored = 0;  // indices whose true count had (near) zero probability
};

/// Log2 probability of the true occupancy vector under a product-Deselby belief.
inline Score information_score(const DeselbyState& belief, const WorldState& truth) {
  if (belief.size() != truth.counts.size()) throw std::invalid_argument("belief and truth differ in size");
  Score s;
  for (std::size_t i = 0; i < belief.size(); ++i) {
    const double bits = log_pmf(belief.at(i), truth.counts[i]) / std::log(2.0);
    if (!(bits >= kScoreFloor)) {
      s.bits += kScoreFloor;
      ++s.floored;
    } else {
      s.bits += bits;
    }
  }
  return s;
}

/// Score of the initial prior updated with this window's observations only.
inline Score reference_score(const DeselbyState& prior, std::span<const Observation> omega,
                             const WorldState& truth, const Hamiltonian& h,
                             const AssimilationOptions& opts = {}) {
  return information_score(assimilate_window(prior, omega, h, 0.0, opts).posterior, truth);
}

// ---------------------------------------------------------------------------
// Per-seed records

struct Snapshot {
  double time = 0.0;
  std::vector<std::uint64_t> counts;
};

struct ObservationSet {
  double time = 0.0;
  std::vector<Observation> obs;
};

struct SeedTruth {
  std::uint64_t seed = 0;
  std::vector<Snapshot> trajectory;  // cycle 0..cycles
  std::vector<ObservationSet> windows;  // cycle 1..cycles
};

struct CycleBelief {
  int cycle = 0;
  double time = 0.0;
  bool skipped = false;
  std::string error;
  DeselbyState belief;
  WindowDiagnostics diagnostics;
};

struct MetricRow {
  std::uint64_t seed = 0;
  int cycle = 0;
  double assimilated_bits = 0.0;
  double reference_bits = 0.0;
  double gain_bits = 0.0;
  std::size_t floored = 0;
  bool reference_failed = false;
};

inline Json to_json(const Snapshot& s) { return Json{{"t", s.time}, {"counts", s.counts}}; }

inline Json to_json(const ObservationSet& w) {
  Json obs = Json::array();
  for (const auto& o : w.obs) obs.push_back({{"index", o.index.id}, {"m", o.count}, {"r", o.detect}});
  return Json{{"t", w.time}, {"obs", obs}};
}

inline Snapshot snapshot_from_json(const Json& j) {
  return {j.at("t").get<double>(), j.at("counts").get<std::vector<std::uint64_t>>()};
}

inline ObservationSet observations_from_json(const Json& j) {
  ObservationSet w;
  w.time = j.at("t").get<double>();
  for (const auto& o : j.at("obs")) {
    w.obs.push_back({StateIndex{o.at("index").get<std::uint32_t>()}, o.at("m").get<std::uint32_t>(),
                     o.at("r").get<double>()});
  }
  return w;
}

inline Json to_json(const CycleBelief& b) {
  return Json{{"cycle", b.cycle},     {"t", b.time},
              {"skipped", b.skipped}, {"lambda", b.belief.lambdas},
              {"delta", b.belief.deltas}};
}

inline CycleBelief belief_from_json(const Json& j) {
  CycleBelief b;
  b.cycle = j.at("cycle").get<int>();
  b.time = j.at("t").get<double>();
  b.skipped = j.at("skipped").get<bool>();
  b.belief = DeselbyState(j.at("lambda").get<std::vector<double>>(),
                          j.at("delta").get<std::vector<std::uint32_t>>());
  return b;
}

inline Json runlog_record(std::uint64_t seed, const CycleBelief& b, std::size_t observations) {
  Json orders = Json::array();
  Json errors = Json::array();
  Json pruned = Json::array();
  for (const auto& d : b.diagnostics.targets) {
    orders.push_back(d.order);
    errors.push_back(d.error_estimate);
    pruned.push_back(d.pruned);
  }
  Json rec{{"seed", seed},
           {"window", b.cycle},
           {"t", b.time},
           {"observations", observations},
           {"status", b.skipped ? "skipped" : "ok"},
           {"order", orders},
           {"error_estimate", errors},
           {"pruned", pruned},
           {"clamped", b.diagnostics.clamped},
           {"wall_seconds", b.diagnostics.wall_seconds}};
  if (b.skipped) rec["error"] = b.error;
  return rec;
}

// ---------------------------------------------------------------------------
// Stages

inline SeedTruth simulate_seed(const ExperimentConfig& c, const BehaviorSpec& spec, std::uint64_t seed) {
  SeedTruth out;
  out.seed = seed;
  WorldState world = sample_initial(c.prior().lambdas, seed);
  Rng trajectory(seed, Stream::kTrajectory);
  Rng observation(seed, Stream::kObservation);
  EventSimulator sim(spec);
  out.trajectory.push_back({world.time, world.counts});
  for (int k = 1; k <= c.cycles; ++k) {
    sim.advance(world, k * c.window, trajectory);
    out.trajectory.push_back({world.time, world.counts});
    out.windows.push_back({world.time, observe(world, c.p_observe, c.p_detect, observation)});
  }
  return out;
}

/// Runs every window in turn. A window that fails is skipped: the belief is
/// carried forward by an observation-free forecast instead (or left as is if
/// that fails too) and the cycle is flagged.
inline std::vector<CycleBelief> assimilate_seed(const ExperimentConfig& c, const Hamiltonian& h,
                                                std::span<const ObservationSet> windows) {
  const auto opts = c.assimilation_options();
  std::vector<CycleBelief> out;
  DeselbyState belief = c.prior();
  int cycle = 0;
  for (const auto& w : windows) {
    CycleBelief b;
    b.cycle = ++cycle;
    b.time = w.time;
    try {
      auto r = assimilate_window(belief, w.obs, h, c.window, opts);
      belief = std::move(r.posterior);
      b.diagnostics = std::move(r.diagnostics);
    } catch (const std::runtime_error& e) {
      b.skipped = true;
      b.error = e.what();
      try {
        auto r = assimilate_window(belief, {}, h, c.window, opts);
        belief = std::move(r.posterior);
        b.diagnostics = std::move(r.diagnostics);
      } catch (const std::runtime_error& e2) {
        b.error += std::string("; forecast failed: ") + e2.what();
      }
    }
    b.belief = belief;
    out.push_back(std::move(b));
  }
  return out;
}

inline std::vector<MetricRow> evaluate_seed(const ExperimentConfig& c, const Hamiltonian& h,
                                            const SeedTruth& truth,
                                            std::span<const CycleBelief> beliefs) {
  if (beliefs.size() != truth.windows.size() || truth.trajectory.size() != truth.windows.size() + 1) {
    throw std::invalid_argument("truth and beliefs cover different cycles");
  }
  const auto prior = c.prior();
  const auto opts = c.assimilation_options();
  std::vector<MetricRow> rows;
  for (std::size_t k = 0; k < beliefs.size(); ++k) {
    const WorldState world{truth.trajectory[k + 1].counts, truth.trajectory[k + 1].time};
    MetricRow row;
    row.seed = truth.seed;
    row.cycle = beliefs[k].cycle;
    const auto assimilated = information_score(beliefs[k].belief, world);
    Score reference;
    try {
      reference = reference_score(prior, truth.windows[k].obs, world, h, opts);
    } catch (const std::runtime_error&) {
      reference = information_score(prior, world);
      row.reference_failed = true;
    }
    row.assimilated_bits = assimilated.bits;
    row.reference_bits = reference.bits;
    row.gain_bits = row.assimilated_bits - row.reference_bits;
    row.floored = assimilated.floored + reference.floored;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Files

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::filesystem::path seed_dir(const std::filesystem::path& out, std::uint64_t seed) {
  return out / ("seed_" + std::to_string(seed));
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) f << r.dump() << '\n';
}

inline std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::vector<Json> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) out.push_back(Json::parse(line));
  }
  return out;
}

inline void write_truth(const std::filesystem::path& dir, const SeedTruth& t) {
  std::filesystem::create_directories(dir);
  std::vector<Json> traj;
  for (const auto& s : t.trajectory) traj.push_back(to_json(s));
  write_jsonl(dir / "trajectory.jsonl", traj);
  std::vector<Json> obs;
  for (const auto& w : t.windows) obs.push_back(to_json(w));
  write_jsonl(dir / "observations.jsonl", obs);
}

inline SeedTruth read_truth(const std::filesystem::path& dir, std::uint64_t seed) {
  SeedTruth t;
  t.seed = seed;
  for (const auto& j : read_jsonl(dir / "trajectory.jsonl")) t.trajectory.push_back(snapshot_from_json(j));
  for (const auto& j : read_jsonl(dir / "observations.jsonl")) t.windows.push_back(observations_from_json(j));
  return t;
}

inline void write_beliefs(const std::filesystem::path& dir, std::span<const CycleBelief> beliefs) {
  std::filesystem::create_directories(dir);
  std::vector<Json> post;
  for (const auto& b : beliefs) post.push_back(to_json(b));
  write_jsonl(dir / "posterior.jsonl", post);
}

inline std::vector<CycleBelief> read_beliefs(const std::filesystem::path& dir) {
  std::vector<CycleBelief> out;
  for (const auto& j : read_jsonl(dir / "posterior.jsonl")) out.push_back(belief_from_json(j));
  return out;
}

inline void write_snapshot(const std::filesystem::path& path, const GridGeometry& g,
                           const DeselbyState& belief, std::span<const std::uint64_t> counts) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "x,y,species,lambda,delta,true_count\n";
  for (std::uint32_t i = 0; i < g.num_states(); ++i) {
    const auto cell = g.cell(StateIndex{i});
    f << cell.x << ',' << cell.y << ',' << (cell.species == Species::kPrey ? "prey" : "predator") << ','
      << format_double(belief.lambdas[i]) << ',' << belief.deltas[i] << ',' << counts[i] << '\n';
  }
}

inline void write_snapshots(const std::filesystem::path& dir, const ExperimentConfig& c,
                            const SeedTruth& truth, std::span<const CycleBelief> beliefs) {
  if (c.snapshot_every == 0) return;
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < beliefs.size(); ++k) {
    if (beliefs[k].cycle % c.snapshot_every != 0) continue;
    write_snapshot(dir / ("snapshot_" + std::to_string(beliefs[k].cycle) + ".csv"), c.model.grid,
                   beliefs[k].belief, truth.trajectory[k + 1].counts);
  }
}

inline void write_metrics(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "seed,cycle,assimilated_bits,reference_bits,gain_bits\n";
  for (const auto& r : rows) {
    f << r.seed << ',' << r.cycle << ',' << format_double(r.assimilated_bits) << ','
      << format_double(r.reference_bits) << ',' << format_double(r.gain_bits) << '\n';
  }
}

inline std::vector<MetricRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(f, line);
  if (line != "seed,cycle,assimilated_bits,reference_bits,gain_bits") {
    throw std::runtime_error("unexpected metrics header: " + line);
  }
  std::vector<MetricRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    MetricRow r;
    char* p = line.data();
    r.seed = std::strtoull(p, &p, 10);
    r.cycle = static_cast<int>(std::strtol(p + 1, &p, 10));
    r.assimilated_bits = std::strtod(p + 1, &p);
    r.reference_bits = std::strtod(p + 1, &p);
    r.gain_bits = std::strtod(p + 1, &p);
    rows.push_back(r);
  }
  return rows;
}

struct ExperimentSummary {
  std::vector<MetricRow> rows;
  std::size_t skipped_windows = 0;
  double wall_seconds = 0.0;
};

/// Mean gain over the last `last` cycles of every seed.
inline double mean_late_gain(std::span<const MetricRow> rows, int cycles, int last) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.cycle > cycles - last) {
      total += r.gain_bits;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(n);
}

/// Full pipeline for every seed. Writes metrics.csv and runlog.jsonl under
/// out_dir, and per-seed trajectory, observations, posterior and snapshots
/// under out_dir/seed_<seed>/.
inline ExperimentSummary run_experiment(const ExperimentConfig& c) {
  c.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::filesystem::path out(c.out_dir);
  std::filesystem::create_directories(out);
  const auto spec = build_predator_prey_spec(c.model);
  const auto h = build_hamiltonian(spec);

  ExperimentSummary summary;
  std::vector<Json> runlog;
  for (auto seed : c.seeds) {
    const auto truth = simulate_seed(c, spec, seed);
    const auto beliefs = assimilate_seed(c, h, truth.windows);
    const auto rows = evaluate_seed(c, h, truth, beliefs);
    const auto dir = seed_dir(out, seed);
    write_truth(dir, truth);
    write_beliefs(dir, beliefs);
    write_snapshots(dir, c, truth, beliefs);
    for (std::size_t k = 0; k < beliefs.size(); ++k) {
      auto rec = runlog_record(seed, beliefs[k], truth.windows[k].obs.size());
      rec["assimilated_bits"] = rows[k].assimilated_bits;
      rec["reference_bits"] = rows[k].reference_bits;
      rec["floored"] = rows[k].floored;
      rec["reference_failed"] = rows[k].reference_failed;
      runlog.push_back(std::move(rec));
      if (beliefs[k].skipped) ++summary.skipped_windows;
    }
    summary.rows.insert(summary.rows.end(), rows.begin(), rows.end());
  }
  write_metrics(out / "metrics.csv", summary.rows);
  write_jsonl(out / "runlog.jsonl", runlog);
  summary.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return summary;
}

}  // namespace fockda
