#pragma once

// Result files of a run: regret.csv, run.json, diag.json, losses.json,
// timing.json and optionally buffer.jsonl. Everything except timing.json is a
// deterministic function of the configuration.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "kftrl/harness.hpp"

namespace kftrl {

inline void write_regret_csv(std::ostream& os, const RegretCurve& curve) {
  os << "T_checkpoint,cum_regret,stderr\n" << std::setprecision(17);
  for (std::size_t i = 0; i < curve.checkpoints.size(); ++i)
    os << curve.checkpoints[i] << ',' << curve.regret[i] << ',' << curve.stderr[i] << '\n';
}

inline json curve_to_json(const RegretCurve& curve) {
  return json{{"checkpoints", curve.checkpoints},
              {"regret", curve.regret},
              {"stderr", curve.stderr},
              {"exact", curve.exact},
              {"eval_points", curve.eval_points}};
}

inline json decomposition_to_json(const Decomposition& d) {
  return json{{"R_tilde", d.r_tilde},
              {"R_tilde_stderr", d.r_tilde_stderr},
              {"B_star", d.b_star},
              {"B_star_stderr", d.b_star_stderr},
              {"B", d.b},
              {"B_stderr", d.b_stderr},
              {"sum", d.sum},
              {"sum_stderr", d.sum_stderr},
              {"regret", d.regret},
              {"regret_stderr", d.regret_stderr},
              {"combined_stderr", d.combined_stderr},
              {"B_star_bound", d.b_star_bound},
              {"consistent", d.consistent()},
              {"B_star_within_bound", d.b_star_within()},
              {"draws", d.draws}};
}

// RunRecord without the raw buffer and without wall times.
inline json run_to_json(const RunRecord& rec, const RegretCurve& curve,
                        const RegretCurve& uniform_reference) {
  json rounds = json::array();
  for (const auto& r : rec.rounds)
    rounds.push_back(json{{"x", r.context},
                          {"a", r.action},
                          {"loss", r.loss},
                          {"probs", r.probs},
                          {"kernel_evals", r.kernel_evals}});
  return json{{"config", config_to_json(rec.config)},
              {"M", rec.params.m},
              {"eta", rec.params.eta},
              {"beta", rec.params.beta},
              {"M_cap", rec.m_cap},
              {"complete", rec.complete},
              {"rounds_completed", rec.horizon()},
              {"total_kernel_evals", rec.total_kernel_evals},
              {"regret", curve_to_json(curve)},
              {"uniform_policy_regret", curve_to_json(uniform_reference)},
              {"rounds", std::move(rounds)}};
}

inline json timing_to_json(const RunRecord& rec) {
  json per_round = json::array();
  double total = 0.0;
  for (const auto& r : rec.rounds) {
    per_round.push_back(r.wall_seconds);
    total += r.wall_seconds;
  }
  return json{{"total_seconds", total}, {"round_seconds", std::move(per_round)}};
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  return out;
}

}  // namespace detail

struct RunOutputs {
  RegretCurve regret;
  RegretCurve uniform_reference;
  Decomposition diag;
};

// Evaluates a finished run and writes every result file into `dir`.
inline RunOutputs write_run_outputs(const std::filesystem::path& dir, const RunRecord& rec,
                                    const Experiment& exp) {
  std::filesystem::create_directories(dir);
  RunOutputs out;
  const EvalSet eval = make_eval_set(exp, exp.config.eval_contexts);
  out.regret = empirical_regret(rec, exp, eval);
  out.uniform_reference = uniform_policy_regret(rec, exp, eval);
  out.diag = decomposition_diagnostic(rec, exp, std::max<std::size_t>(1, exp.config.diag_eval));

  {
    auto f = detail::open_out(dir / "regret.csv");
    write_regret_csv(f, out.regret);
  }
  detail::open_out(dir / "run.json") << run_to_json(rec, out.regret, out.uniform_reference).dump(1)
                                     << '\n';
  detail::open_out(dir / "diag.json") << decomposition_to_json(out.diag).dump(1) << '\n';
  detail::open_out(dir / "losses.json") << loss_sequence_to_json(rec.losses).dump() << '\n';
  detail::open_out(dir / "timing.json") << timing_to_json(rec).dump(1) << '\n';
  if (rec.config.write_buffer) {
    auto f = detail::open_out(dir / "buffer.jsonl");
    write_buffer_jsonl(f, rec.buffer);
  }
  return out;
}

}  // namespace kftrl
