// mfx: command-line front end for the marketfx shared library.
//
// Subcommands: mean-field, simulate, replicate, tuition-example.
// Exit codes: 0 success, 2 invalid arguments/configuration, 1 computational
// failure.  Flag precedence: command line > --config JSON file > defaults;
// the effective configuration is echoed next to any file outputs.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "marketfx.h"
#include "json.hpp"

using nlohmann::json;

namespace {

struct Options {
  std::string scenario = "tech-intervention";
  std::string params;  // scenario parameter overrides (JSON object string)
  int n = 2500;
  double pi = 0.5;
  double h_scale = NAN, h_exponent = NAN, xi_scale = NAN, xi_exponent = NAN, eta = NAN;
  std::uint64_t seed = 1;
  int reps = 1000;
  int threads = 0;
  double level = 0.95;
  std::string out;
  std::string config;
  std::string density_out;
  std::string per_rep_out;
  std::string density_estimand;
  // tuition-example
  double kappa_s = NAN, kappa_d = NAN, tau_ade = NAN;
};

[[noreturn]] void die(int code, const std::string& msg) {
  std::cerr << "mfx: " << msg << std::endl;
  std::exit(code);
}

void check(int rc) {
  if (rc != MFX_OK) die(rc, mfx_last_error());
}

// flags > config file > defaults
void merge_config(CLI::App* cmd, Options& opt) {
  if (opt.config.empty()) return;
  std::ifstream in(opt.config);
  if (!in) die(MFX_ERR_INVALID, "cannot read config file " + opt.config);
  json cfg = json::parse(in, nullptr, false);
  if (cfg.is_discarded() || !cfg.is_object())
    die(MFX_ERR_INVALID, "config file must hold a JSON object");
  auto apply = [&](const char* flag, const char* key, auto& field) {
    const CLI::Option* o = cmd->get_option_no_throw(flag);
    if (o && o->count() > 0) return;  // explicit flag wins
    if (cfg.contains(key)) field = cfg.at(key).get<std::decay_t<decltype(field)>>();
  };
  apply("--scenario", "scenario", opt.scenario);
  apply("--params", "params", opt.params);
  apply("--n", "n", opt.n);
  apply("--pi", "pi", opt.pi);
  apply("--h-scale", "h_scale", opt.h_scale);
  apply("--h-exponent", "h_exponent", opt.h_exponent);
  apply("--xi-scale", "xi_scale", opt.xi_scale);
  apply("--xi-exponent", "xi_exponent", opt.xi_exponent);
  apply("--eta", "eta", opt.eta);
  apply("--seed", "seed", opt.seed);
  apply("--reps", "reps", opt.reps);
  apply("--threads", "threads", opt.threads);
  apply("--level", "level", opt.level);
  apply("--out", "out", opt.out);
}

mfx_scenario* open_scenario(const Options& opt) {
  mfx_scenario* sc = nullptr;
  check(mfx_scenario_create(opt.scenario.c_str(), opt.params.empty() ? nullptr : opt.params.c_str(),
                            &sc));
  return sc;
}

mfx_design build_design(mfx_scenario* sc, const Options& opt) {
  mfx_design d;
  check(mfx_design_default(sc, &d));
  d.pi = opt.pi;
  if (!std::isnan(opt.h_scale)) d.h_scale = opt.h_scale;
  if (!std::isnan(opt.h_exponent)) d.h_exponent = opt.h_exponent;
  if (!std::isnan(opt.xi_scale)) d.xi_scale = opt.xi_scale;
  if (!std::isnan(opt.xi_exponent)) d.xi_exponent = opt.xi_exponent;
  if (!std::isnan(opt.eta)) d.eta = opt.eta;
  return d;
}

json effective_config(const Options& opt, const mfx_design* d) {
  json j;
  j["scenario"] = opt.scenario;
  if (!opt.params.empty()) j["params"] = json::parse(opt.params);
  j["n"] = opt.n;
  j["seed"] = opt.seed;
  j["reps"] = opt.reps;
  j["threads"] = opt.threads;
  j["level"] = opt.level;
  if (d) {
    j["pi"] = d->pi;
    j["h_scale"] = d->h_scale;
    j["h_exponent"] = d->h_exponent;
    if (d->continuous) {
      j["xi_scale"] = d->xi_scale;
      j["xi_exponent"] = d->xi_exponent;
      j["eta"] = d->eta;
    }
  } else {
    j["pi"] = opt.pi;
    if (!std::isnan(opt.eta)) j["eta"] = opt.eta;
  }
  return j;
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  if (!out) die(MFX_ERR_RUNTIME, "cannot open " + path + " for writing");
  out << body;
  if (!body.empty() && body.back() != '\n') out << '\n';
}

void add_common(CLI::App* cmd, Options& opt, bool with_design) {
  cmd->add_option("--scenario", opt.scenario, "scenario id");
  cmd->add_option("--params", opt.params, "scenario parameter overrides (JSON object)");
  cmd->add_option("--pi", opt.pi, "treatment probability");
  cmd->add_option("--config", opt.config, "JSON config file (flags override it)");
  cmd->add_option("--out", opt.out, "output path prefix");
  if (with_design) {
    cmd->add_option("--n", opt.n, "sample size");
    cmd->add_option("--h-scale", opt.h_scale, "perturbation scale c in h_n = c n^-alpha");
    cmd->add_option("--h-exponent", opt.h_exponent, "perturbation exponent alpha");
    cmd->add_option("--xi-scale", opt.xi_scale, "treatment perturbation scale (continuous)");
    cmd->add_option("--xi-exponent", opt.xi_exponent, "treatment perturbation exponent");
    cmd->add_option("--eta", opt.eta, "policy level (continuous)");
    cmd->add_option("--seed", opt.seed, "master RNG seed");
    cmd->add_option("--level", opt.level, "confidence level");
  }
}

int cmd_mean_field(Options& opt) {
  mfx_scenario* sc = open_scenario(opt);
  char* out_json = nullptr;
  check(mfx_mean_field(sc, opt.pi, opt.eta, &out_json));
  std::cout << out_json << std::endl;
  if (!opt.out.empty()) {
    write_file(opt.out + ".mean_field.json", out_json);
    write_file(opt.out + ".config.json", effective_config(opt, nullptr).dump(2));
  }
  mfx_string_free(out_json);
  mfx_scenario_free(sc);
  return 0;
}

int cmd_simulate(Options& opt) {
  if (opt.out.empty()) die(MFX_ERR_INVALID, "simulate requires --out");
  mfx_scenario* sc = open_scenario(opt);
  const mfx_design d = build_design(sc, opt);
  mfx_dataset* ds = nullptr;
  check(mfx_experiment_run(sc, opt.n, &d, opt.seed, &ds));
  check(mfx_dataset_write_csv(ds, (opt.out + ".csv").c_str()));
  char* meta = nullptr;
  check(mfx_dataset_metadata(ds, &meta));
  write_file(opt.out + ".meta.json", meta);
  char* report = nullptr;
  check(mfx_estimate(ds, opt.level, &report));
  write_file(opt.out + ".report.json", report);
  write_file(opt.out + ".config.json", effective_config(opt, &d).dump(2));
  std::cout << report << std::endl;
  mfx_string_free(meta);
  mfx_string_free(report);
  mfx_dataset_free(ds);
  mfx_scenario_free(sc);
  return 0;
}

int cmd_replicate(Options& opt) {
  mfx_scenario* sc = open_scenario(opt);
  const mfx_design d = build_design(sc, opt);
  char* summary_json = nullptr;
  char* summary_csv = nullptr;
  check(mfx_replicate(sc, &d, opt.n, opt.reps, opt.seed, opt.threads, opt.level,
                      opt.per_rep_out.empty() ? nullptr : opt.per_rep_out.c_str(),
                      opt.density_out.empty() ? nullptr : opt.density_out.c_str(),
                      opt.density_estimand.empty() ? nullptr : opt.density_estimand.c_str(),
                      &summary_json, &summary_csv));
  std::cout << summary_csv;
  if (!opt.out.empty()) {
    write_file(opt.out + ".summary.json", summary_json);
    write_file(opt.out + ".summary.csv", summary_csv);
    write_file(opt.out + ".config.json", effective_config(opt, &d).dump(2));
  }
  mfx_string_free(summary_json);
  mfx_string_free(summary_csv);
  mfx_scenario_free(sc);
  return 0;
}

int cmd_tuition(Options& opt) {
  double aie = 0.0;
  check(mfx_aie_from_elasticities(opt.kappa_s, opt.kappa_d, opt.tau_ade, &aie));
  json j;
  j["tau_aie"] = aie;
  j["tau_total"] = opt.tau_ade + aie;
  std::cout << j.dump(2) << std::endl;
  if (!opt.out.empty()) {
    write_file(opt.out + ".tuition.json", j.dump(2));
    json cfg;
    cfg["kappa_s"] = opt.kappa_s;
    cfg["kappa_d"] = opt.kappa_d;
    cfg["tau_ade"] = opt.tau_ade;
    write_file(opt.out + ".config.json", cfg.dump(2));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"marketfx: treatment effects under market-price interference"};
  app.require_subcommand(1);
  Options opt;

  CLI::App* mf = app.add_subcommand("mean-field", "mean-field equilibrium, effects and oracles");
  add_common(mf, opt, false);
  mf->add_option("--eta", opt.eta, "policy level (continuous scenarios)");

  CLI::App* sim = app.add_subcommand("simulate", "run one experiment; dataset CSV + report JSON");
  add_common(sim, opt, true);

  CLI::App* rep = app.add_subcommand("replicate", "Monte Carlo replication summary");
  add_common(rep, opt, true);
  rep->add_option("--reps", opt.reps, "number of replications");
  rep->add_option("--threads", opt.threads, "worker threads (0 = all cores)");
  rep->add_option("--density-out", opt.density_out, "write a kernel-density CSV here");
  rep->add_option("--density-estimand", opt.density_estimand, "estimand for the density curve");
  rep->add_option("--per-rep-out", opt.per_rep_out, "write per-replication estimates CSV here");

  CLI::App* tui = app.add_subcommand("tuition-example", "Eq. 5 sufficient-statistic calculator");
  tui->add_option("--kappa-s", opt.kappa_s, "supply elasticity")->required();
  tui->add_option("--kappa-d", opt.kappa_d, "demand elasticity")->required();
  tui->add_option("--tau-ade", opt.tau_ade, "direct effect estimate")->required();
  tui->add_option("--out", opt.out, "output path prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return MFX_ERR_INVALID;
  }

  try {
    if (mf->parsed()) {
      merge_config(mf, opt);
      return cmd_mean_field(opt);
    }
    if (sim->parsed()) {
      merge_config(sim, opt);
      return cmd_simulate(opt);
    }
    if (rep->parsed()) {
      merge_config(rep, opt);
      return cmd_replicate(opt);
    }
    if (tui->parsed()) return cmd_tuition(opt);
  } catch (const std::exception& e) {
    die(MFX_ERR_RUNTIME, e.what());
  }
  return MFX_ERR_INVALID;
}
