// kftrl: run, sweep and audit KernelFTRL experiments.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kftrl/audit_suites.hpp"
#include "kftrl/kftrl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> max_m;
  unsigned threads = 1;
};

kftrl::ExperimentConfig load(const Common& c) {
  kftrl::ExperimentConfig cfg = kftrl::load_config(c.config);
  if (c.seed) cfg.seeds = kftrl::Seeds::from_master(*c.seed);
  if (c.max_m) {
    cfg.max_m = *c.max_m;
    cfg.m = std::min(cfg.m, *c.max_m);
  }
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << j.dump(1) << '\n';
}

int cmd_run(const Common& c) {
  const auto exp = kftrl::make_experiment(load(c));
  const auto rec = kftrl::run(exp);
  const auto out = kftrl::write_run_outputs(exp.config.out_dir, rec, exp);
  std::cout << std::setprecision(6) << "T=" << rec.horizon() << " M=" << rec.params.m
            << " eta=" << rec.params.eta << " beta=" << rec.params.beta
            << " regret=" << out.regret.final_regret()
            << " uniform=" << out.uniform_reference.final_regret()
            << (rec.complete ? "" : " (incomplete)") << "\nwrote " << exp.config.out_dir << '\n';
  return 0;
}

// Runs every (horizon, seed) pair, in parallel over independent runs.
int cmd_sweep(const Common& c, const std::vector<std::size_t>& horizons, std::size_t num_seeds,
              std::uint64_t first_seed) {
  const kftrl::ExperimentConfig base = load(c);
  struct Job {
    std::size_t horizon;
    std::uint64_t seed;
    double regret = 0.0;
    double regret_stderr = 0.0;
    double uniform = 0.0;
    std::size_t m = 0;
  };
  std::vector<Job> jobs;
  for (std::size_t t : horizons)
    for (std::size_t s = 0; s < num_seeds; ++s) jobs.push_back(Job{t, first_seed + s});

  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        kftrl::ExperimentConfig cfg = base;
        cfg.horizon = jobs[i].horizon;
        cfg.seeds = kftrl::Seeds::from_master(jobs[i].seed);
        const auto exp = kftrl::make_experiment(cfg);
        const auto rec = kftrl::run(exp);
        const auto eval = kftrl::make_eval_set(exp, cfg.eval_contexts);
        const auto curve = kftrl::empirical_regret(rec, exp, eval);
        jobs[i].regret = curve.final_regret();
        jobs[i].regret_stderr = curve.stderr.back();
        jobs[i].uniform = kftrl::uniform_policy_regret(rec, exp, eval).final_regret();
        jobs[i].m = rec.params.m;
      } catch (...) {
        std::lock_guard lock(err_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned i = 0; i < std::max(1u, c.threads); ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  const fs::path dir = base.out_dir;
  fs::create_directories(dir);
  std::ofstream runs(dir / "sweep_runs.csv");
  runs << "T,seed,M,regret,regret_stderr,uniform_regret\n" << std::setprecision(17);
  for (const auto& j : jobs)
    runs << j.horizon << ',' << j.seed << ',' << j.m << ',' << j.regret << ',' << j.regret_stderr
         << ',' << j.uniform << '\n';

  std::vector<double> ts, means;
  json summary = json::array();
  std::ofstream agg(dir / "sweep.csv");
  agg << "T,mean_regret,stderr,mean_uniform_regret,seeds\n" << std::setprecision(17);
  for (std::size_t t : horizons) {
    kftrl::RunningStats r, u;
    for (const auto& j : jobs)
      if (j.horizon == t) {
        r.add(j.regret);
        u.add(j.uniform);
      }
    agg << t << ',' << r.mean << ',' << r.stderr() << ',' << u.mean << ',' << r.n << '\n';
    summary.push_back({{"T", t}, {"mean_regret", r.mean}, {"stderr", r.stderr()},
                       {"mean_uniform_regret", u.mean}});
    ts.push_back(static_cast<double>(t));
    means.push_back(r.mean);
  }
  json result{{"horizons", summary}};
  if (ts.size() >= 3) {
    try {
      result["slope"] = kftrl::slope_fit(ts, means);
    } catch (const std::invalid_argument& e) {
      result["slope_error"] = e.what();
    }
  }
  write_json(dir / "sweep.json", result);
  std::cout << result.dump(1) << '\n';
  return 0;
}

int cmd_audit(const Common& c, const std::string& suite, bool quick) {
  namespace su = kftrl::suites;
  const std::uint64_t seed = c.seed.value_or(1);
  auto scale = [&](std::size_t full) { return quick ? std::max<std::size_t>(1, full / 100) : full; };
  auto want = [&](const char* s) { return suite == "all" || suite == s; };
  json out;
  if (want("oracle")) {
    const auto r = su::oracle_equivalence(scale(1000), seed);
    out["oracle"] = {{"instances", r.instances}, {"max_rel_err_q", r.max_rel_err_q},
                     {"max_rel_err_b", r.max_rel_err_b}, {"seconds", r.seconds}};
  }
  if (want("complexity")) {
    const auto r = su::complexity_count(64, seed);
    out["complexity"] = {{"max_M", r.max_m}, {"violations", r.violations}, {"evals", r.evals}};
  }
  if (want("ftrl")) {
    const auto r = su::ftrl_solve_check(scale(10000), seed);
    out["ftrl"] = {{"solves", r.solves},
                   {"max_normalization_err", r.max_normalization_err},
                   {"max_kkt_residual", r.max_kkt_residual},
                   {"grid_instances", r.grid_instances},
                   {"grid_losses", r.grid_losses}};
  }
  if (want("regret")) {
    for (double cmax : {5.0, 50.0}) {
      const auto r = su::ftrl_regret_check(scale(1000), 200, cmax, seed);
      out["regret"].push_back({{"c_max", cmax}, {"checks", r.checks},
                               {"violations", r.violations}, {"min_slack", r.min_slack}});
    }
  }
  if (want("trace")) {
    for (const auto& cell : su::trace_bound_check(scale(1000000), seed))
      out["trace"].push_back({{"profile", cell.profile}, {"c", cell.c}, {"M", cell.m},
                              {"eps", cell.eps}, {"skipped", cell.skipped},
                              {"trace", cell.trace}, {"bound", cell.bound},
                              {"allowance", cell.allowance}, {"pass", cell.pass}});
  }
  if (want("bias")) {
    for (const auto& cell : su::bias_check(scale(100000), seed))
      out["bias"].push_back({{"beta", cell.beta}, {"M", cell.m}, {"action", cell.action},
                             {"x", cell.x}, {"bias", cell.audit.empirical_bias},
                             {"bias_stderr", cell.audit.mc_stderr}, {"bound", cell.audit.bound},
                             {"overestimate", cell.audit.overestimate},
                             {"overestimate_bound", cell.audit.overestimate_bound},
                             {"pass", cell.audit.bias_within() && cell.audit.overestimate_within()}});
  }
  if (want("moment")) {
    for (const auto& cell : su::second_moment_check(scale(100000), 0.1, seed))
      out["moment"].push_back({{"beta", cell.beta}, {"M", cell.m}, {"mean", cell.audit.mean},
                               {"stderr", cell.audit.mc_stderr}, {"bound", cell.audit.bound},
                               {"pass", cell.audit.within()}});
  }
  if (out.is_null()) throw std::invalid_argument("unknown suite '" + suite + "'");
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_json(fs::path(c.out) / "audit.json", out);
  }
  std::cout << out.dump(1) << '\n';
  return 0;
}

int cmd_oracle(const Common& c, std::size_t instances, const std::string& dump) {
  const auto r = kftrl::suites::oracle_equivalence(instances, c.seed.value_or(1));
  json out{{"instances", r.instances},
           {"comparisons", r.comparisons},
           {"max_rel_err_q", r.max_rel_err_q},
           {"max_rel_err_b", r.max_rel_err_b},
           {"seconds", r.seconds}};
  if (!dump.empty()) write_json(dump, json{{"summary", out}, {"worst", r.worst}});
  std::cout << out.dump(1) << '\n';
  return r.max_rel_err() <= 1e-10 ? 0 : 1;
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t comma = s.find(',', pos);
    out.push_back(std::stoull(s.substr(pos, comma - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KernelFTRL adversarial contextual bandit experiments"};
  app.require_subcommand(1);
  Common common;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", common.config, "experiment config (JSON)");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "master seed; derives every stream seed");
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--max-m", common.max_m, "cap on the resample count M");
    sub->add_option("--threads", common.threads, "worker threads for independent runs")
        ->check(CLI::PositiveNumber);
  };

  auto* run = app.add_subcommand("run", "single experiment");
  add_common(run, true);

  auto* sweep = app.add_subcommand("sweep", "horizon x seed grid");
  add_common(sweep, true);
  std::string horizons = "256,512,1024,2048";
  std::size_t num_seeds = 8;
  std::uint64_t first_seed = 1;
  sweep->add_option("--horizons", horizons, "comma-separated horizons")->capture_default_str();
  sweep->add_option("--num-seeds", num_seeds, "seeds per horizon")->capture_default_str();
  sweep->add_option("--first-seed", first_seed, "first master seed")->capture_default_str();

  auto* audit = app.add_subcommand("audit", "property suites");
  add_common(audit, false);
  std::string suite = "all";
  bool quick = false;
  audit->add_option("--suite", suite,
                    "all | oracle | complexity | ftrl | regret | trace | bias | moment")
      ->capture_default_str();
  audit->add_flag("--quick", quick, "100x smaller sample sizes");

  auto* oracle = app.add_subcommand("oracle-check", "kgr against the feature-space oracle");
  add_common(oracle, false);
  std::size_t instances = 1000;
  std::string dump;
  oracle->add_option("--instances", instances, "random instances")->capture_default_str();
  oracle->add_option("--dump", dump, "write summary and worst instance as JSON");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(common);
    if (*sweep) return cmd_sweep(common, parse_list(horizons), num_seeds, first_seed);
    if (*audit) return cmd_audit(common, suite, quick);
    if (*oracle) return cmd_oracle(common, instances, dump);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
