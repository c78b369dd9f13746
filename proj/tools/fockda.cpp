#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "fockda/experiment.hpp"

using namespace fockda;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  int cycles = 0;
  std::string grid;
  double tol = 0.0;
  int threads = -1;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "Flat JSON experiment config")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seeds, "Seed(s) to run, replacing the config's list");
  app->add_option("--out", f.out, "Output directory");
  app->add_option("--cycles", f.cycles, "Number of assimilation cycles")->check(CLI::PositiveNumber);
  app->add_option("--grid", f.grid, "Grid size as WxH");
  app->add_option("--tol", f.tol, "Series relative tolerance")->check(CLI::PositiveNumber);
  app->add_option("--threads", f.threads, "Worker threads per window (0 = all cores)");
}

ExperimentConfig resolve(const CommonFlags& f) {
  Json j = f.config.empty() ? Json::object() : config_to_json(load_config(f.config));
  if (!f.seeds.empty()) j["seeds"] = f.seeds;
  if (!f.out.empty()) j["out_dir"] = f.out;
  if (f.cycles > 0) j["cycles"] = f.cycles;
  if (f.tol > 0.0) j["rel_tol"] = f.tol;
  if (f.threads >= 0) j["threads"] = f.threads;
  if (!f.grid.empty()) {
    unsigned w = 0;
    unsigned h = 0;
    char x = 0;
    char extra = 0;
    if (std::sscanf(f.grid.c_str(), "%u%c%u%c", &w, &x, &h, &extra) != 3 || (x != 'x' && x != 'X')) {
      throw std::invalid_argument("--grid expects WxH, got " + f.grid);
    }
    j["width"] = w;
    j["height"] = h;
  }
  return config_from_json(j);
}

void save_config(const ExperimentConfig& c) {
  fs::create_directories(c.out_dir);
  std::ofstream(fs::path(c.out_dir) / "config.json") << config_to_json(c).dump(2) << '\n';
}

int cmd_simulate(const ExperimentConfig& c) {
  save_config(c);
  const auto spec = build_predator_prey_spec(c.model);
  for (auto seed : c.seeds) {
    const auto truth = simulate_seed(c, spec, seed);
    write_truth(seed_dir(c.out_dir, seed), truth);
    std::size_t n = 0;
    for (const auto& w : truth.windows) n += w.obs.size();
    std::cout << "seed " << seed << ": " << truth.windows.size() << " windows, " << n << " observations\n";
  }
  return 0;
}

int cmd_assimilate(const ExperimentConfig& c) {
  const auto h = build_hamiltonian(build_predator_prey_spec(c.model));
  std::vector<Json> runlog;
  for (auto seed : c.seeds) {
    const auto dir = seed_dir(c.out_dir, seed);
    const auto truth = read_truth(dir, seed);
    const auto beliefs = assimilate_seed(c, h, truth.windows);
    write_beliefs(dir, beliefs);
    std::size_t skipped = 0;
    for (std::size_t k = 0; k < beliefs.size(); ++k) {
      runlog.push_back(runlog_record(seed, beliefs[k], truth.windows[k].obs.size()));
      skipped += beliefs[k].skipped;
    }
    std::cout << "seed " << seed << ": " << beliefs.size() << " windows, " << skipped << " skipped\n";
  }
  write_jsonl(fs::path(c.out_dir) / "runlog.jsonl", runlog);
  return 0;
}

void report(const ExperimentConfig& c, const std::vector<MetricRow>& rows) {
  const int last = std::min(8, c.cycles);
  std::printf("rows %zu, mean gain over last %d cycles: %.6f bits\n", rows.size(), last,
              mean_late_gain(rows, c.cycles, last));
}

int cmd_evaluate(const ExperimentConfig& c) {
  const auto h = build_hamiltonian(build_predator_prey_spec(c.model));
  std::vector<MetricRow> rows;
  for (auto seed : c.seeds) {
    const auto dir = seed_dir(c.out_dir, seed);
    const auto truth = read_truth(dir, seed);
    const auto beliefs = read_beliefs(dir);
    const auto r = evaluate_seed(c, h, truth, beliefs);
    write_snapshots(dir, c, truth, beliefs);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  write_metrics(fs::path(c.out_dir) / "metrics.csv", rows);
  report(c, rows);
  return 0;
}

int cmd_run(const ExperimentConfig& c) {
  save_config(c);
  const auto summary = run_experiment(c);
  report(c, summary.rows);
  std::printf("skipped windows %zu, wall %.1f s\n", summary.skipped_windows, summary.wall_seconds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Operator-algebra data assimilation for the predator-prey model"};
  app.require_subcommand(1);
  CommonFlags flags;
  auto* simulate = app.add_subcommand("simulate", "Simulate truth and observations");
  auto* assimilate = app.add_subcommand("assimilate", "Assimilate stored observations");
  auto* evaluate = app.add_subcommand("evaluate", "Score stored posteriors against truth");
  auto* run = app.add_subcommand("run", "Simulate, assimilate and evaluate");
  auto* dump = app.add_subcommand("config", "Print the effective config");
  for (auto* sub : {simulate, assimilate, evaluate, run, dump}) add_common(sub, flags);

  CLI11_PARSE(app, argc, argv);
  try {
    const auto c = resolve(flags);
    if (*simulate) return cmd_simulate(c);
    if (*assimilate) return cmd_assimilate(c);
    if (*evaluate) return cmd_evaluate(c);
    if (*run) return cmd_run(c);
    std::cout << config_to_json(c).dump(2) << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
