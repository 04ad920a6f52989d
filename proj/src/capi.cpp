#include "../include/marketfx.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "estimators.hpp"
#include "montecarlo.hpp"

using nlohmann::json;

struct mfx_scenario {
  marketfx::model::Scenario sc;
};

struct mfx_dataset {
  marketfx::experiment::ExperimentDataset ds;
};

namespace {

thread_local std::string g_last_error;

int fail(int code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

// maps C++ exceptions onto the status-code convention
template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const std::invalid_argument& e) {
    return fail(MFX_ERR_INVALID, e.what());
  } catch (const std::exception& e) {
    return fail(MFX_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(MFX_ERR_RUNTIME, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<double> to_std(const marketfx::model::Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

json mat_to_json(const marketfx::model::Mat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

marketfx::experiment::Design to_design(const mfx_scenario* sc, const mfx_design* d) {
  marketfx::experiment::Design out;
  out.pi = d->pi;
  out.h_scale = d->h_scale;
  out.h_exponent = d->h_exponent;
  out.xi_scale = d->xi_scale;
  out.xi_exponent = d->xi_exponent;
  out.eta = d->eta;
  out.treatment_kind = d->continuous ? marketfx::model::TreatmentKind::Continuous
                                     : marketfx::model::TreatmentKind::Binary;
  if ((sc->sc.treatment_kind == marketfx::model::TreatmentKind::Continuous) !=
      (d->continuous != 0))
    throw std::invalid_argument("design treatment kind does not match the scenario");
  return out;
}

}  // namespace

extern "C" {

const char* mfx_last_error(void) { return g_last_error.c_str(); }

void mfx_string_free(char* s) { std::free(s); }

int mfx_scenario_create(const char* id, const char* params_json, mfx_scenario** out) {
  return guarded([&]() {
    if (!id || !out) return fail(MFX_ERR_INVALID, "id and out must be non-null");
    json params = json::object();
    if (params_json && *params_json) {
      params = json::parse(params_json, nullptr, false);
      if (params.is_discarded() || !params.is_object())
        return fail(MFX_ERR_INVALID, "params_json must be a JSON object");
    }
    *out = new mfx_scenario{marketfx::model::make_scenario(id, params)};
    return MFX_OK;
  });
}

void mfx_scenario_free(mfx_scenario* sc) { delete sc; }

int mfx_scenario_describe(const mfx_scenario* sc, char** json_out) {
  return guarded([&]() {
    if (!sc || !json_out) return fail(MFX_ERR_INVALID, "null argument");
    json j;
    j["id"] = sc->sc.id;
    j["num_goods"] = sc->sc.num_goods;
    j["price_lower"] = to_std(sc->sc.price_lower);
    j["price_upper"] = to_std(sc->sc.price_upper);
    j["treatment_kind"] =
        sc->sc.treatment_kind == marketfx::model::TreatmentKind::Binary ? "binary" : "continuous";
    if (sc->sc.treatment_kind == marketfx::model::TreatmentKind::Continuous) {
      j["eta"] = sc->sc.continuous.eta;
      j["xi_scale"] = sc->sc.continuous.xi_scale;
      j["xi_exponent"] = sc->sc.continuous.xi_exponent;
    }
    j["params"] = sc->sc.params;
    *json_out = dup_string(j.dump(2));
    return MFX_OK;
  });
}

int mfx_design_default(const mfx_scenario* sc, mfx_design* out) {
  return guarded([&]() {
    if (!sc || !out) return fail(MFX_ERR_INVALID, "null argument");
    const auto d = marketfx::experiment::Design::for_scenario(sc->sc);
    out->pi = d.pi;
    out->h_scale = d.h_scale;
    out->h_exponent = d.h_exponent;
    out->xi_scale = d.xi_scale;
    out->xi_exponent = d.xi_exponent;
    out->eta = d.eta;
    out->continuous = d.treatment_kind == marketfx::model::TreatmentKind::Continuous ? 1 : 0;
    return MFX_OK;
  });
}

int mfx_mean_field(const mfx_scenario* sc, double pi, double eta_override, char** json_out) {
  return guarded([&]() {
    if (!sc || !json_out) return fail(MFX_ERR_INVALID, "null argument");
    marketfx::model::Scenario scenario = sc->sc;
    if (!std::isnan(eta_override)) {
      if (scenario.treatment_kind != marketfx::model::TreatmentKind::Continuous)
        return fail(MFX_ERR_INVALID, "eta applies only to continuous-treatment scenarios");
      scenario.continuous.eta = eta_override;
    }
    const auto mfs = marketfx::equilibrium::true_effects(scenario, pi);
    const auto contraction = marketfx::equilibrium::check_contraction(scenario, pi);

    json j;
    j["pi"] = pi;
    j["p_star"] = to_std(mfs.p_star);
    j["z_jacobian"] = mat_to_json(mfs.z_jacobian);
    j["dpdpi"] = to_std(mfs.dpdpi);
    j["grad_y"] = to_std(mfs.grad_y);
    j["gamma"] = to_std(mfs.gamma);
    j["clearing_residual"] = mfs.clearing_residual;
    j["contraction_max_norm"] = contraction.max_norm;
    j["contraction"] = contraction.contraction;
    if (scenario.treatment_kind == marketfx::model::TreatmentKind::Binary) {
      j["tau_ade_star"] = mfs.tau_ade_star;
      j["tau_aie_star"] = mfs.tau_aie_star;
    } else {
      j["eta"] = scenario.continuous.eta;
      j["tau_mpe_star"] = mfs.tau_mpe_star;
      j["tau_dpe_star"] = mfs.tau_dpe_star;
      j["tau_ipe_star"] = mfs.tau_ipe_star;
    }
    if (std::isfinite(mfs.sigma2_D)) {
      j["sigma2_D"] = mfs.sigma2_D;
      j["sigma2_I"] = mfs.sigma2_I;
      j["residual_var"] = mfs.residual_var;
    }
    *json_out = dup_string(j.dump(2));
    return MFX_OK;
  });
}

int mfx_experiment_run(const mfx_scenario* sc, int n, const mfx_design* design, uint64_t seed,
                       mfx_dataset** out) {
  return guarded([&]() {
    if (!sc || !design || !out) return fail(MFX_ERR_INVALID, "null argument");
    const auto d = to_design(sc, design);
    *out = new mfx_dataset{marketfx::experiment::run_experiment(sc->sc, n, d, seed)};
    return MFX_OK;
  });
}

void mfx_dataset_free(mfx_dataset* ds) { delete ds; }

int mfx_dataset_write_csv(const mfx_dataset* ds, const char* path) {
  return guarded([&]() {
    if (!ds || !path) return fail(MFX_ERR_INVALID, "null argument");
    marketfx::experiment::write_dataset_csv(ds->ds, path);
    return MFX_OK;
  });
}

int mfx_dataset_metadata(const mfx_dataset* ds, char** json_out) {
  return guarded([&]() {
    if (!ds || !json_out) return fail(MFX_ERR_INVALID, "null argument");
    *json_out = dup_string(marketfx::experiment::dataset_metadata(ds->ds).dump(2));
    return MFX_OK;
  });
}

int mfx_estimate(const mfx_dataset* ds, double level, char** json_out) {
  return guarded([&]() {
    if (!ds || !json_out) return fail(MFX_ERR_INVALID, "null argument");
    const auto report = marketfx::estimators::estimate(ds->ds, level);
    *json_out = dup_string(marketfx::estimators::report_to_json(report).dump(2));
    return MFX_OK;
  });
}

int mfx_replicate(const mfx_scenario* sc, const mfx_design* design, int n, int reps,
                  uint64_t base_seed, int threads, double level, const char* per_rep_csv_path,
                  const char* density_csv_path, const char* density_estimand,
                  char** summary_json_out, char** summary_csv_out) {
  return guarded([&]() {
    if (!sc || !design || !summary_json_out) return fail(MFX_ERR_INVALID, "null argument");
    marketfx::montecarlo::ReplicationPlan plan;
    plan.scenario = sc->sc;
    plan.design = to_design(sc, design);
    plan.n = n;
    plan.num_reps = reps;
    plan.base_seed = base_seed;
    plan.threads = threads;
    plan.level = level;

    const bool continuous = plan.design.treatment_kind ==
                            marketfx::model::TreatmentKind::Continuous;
    std::vector<marketfx::estimators::EstimateReport> kept;
    std::function<void(int, const marketfx::estimators::EstimateReport&)> sink;
    if (per_rep_csv_path || density_csv_path)
      sink = [&kept](int, const marketfx::estimators::EstimateReport& r) { kept.push_back(r); };

    const auto summary = marketfx::montecarlo::run_replications(plan, sink);

    if (per_rep_csv_path) {
      std::ofstream out(per_rep_csv_path);
      if (!out) throw std::runtime_error(std::string("cannot open ") + per_rep_csv_path);
      out.precision(17);
      out << "rep,tau_ade_hat,tau_aie_hat,ci_ade_lo,ci_ade_hi,ci_aie_lo,ci_aie_hi";
      if (continuous) {
        out << ",tau_mpe_hat,tau_dpe_hat,tau_ipe_hat";
        for (int j = 1; j <= sc->sc.num_goods; ++j) out << ",dp_deta_" << j;
      }
      out << "\n";
      for (std::size_t r = 0; r < kept.size(); ++r) {
        const auto& e = kept[r];
        out << (r + 1) << ',' << e.tau_ade_hat << ',' << e.tau_aie_hat << ',' << e.ci_ade[0]
            << ',' << e.ci_ade[1] << ',' << e.ci_aie[0] << ',' << e.ci_aie[1];
        if (continuous) {
          out << ',' << e.tau_mpe_hat << ',' << e.tau_dpe_hat << ',' << e.tau_ipe_hat;
          for (int j = 0; j < sc->sc.num_goods; ++j) out << ',' << e.dpdeta_hat[j];
        }
        out << "\n";
      }
    }

    if (density_csv_path) {
      std::string which = density_estimand && *density_estimand
                              ? density_estimand
                              : (continuous ? "MPE" : "ADE");
      std::vector<double> values;
      values.reserve(kept.size());
      for (const auto& e : kept) {
        if (which == "ADE") values.push_back(e.tau_ade_hat);
        else if (which == "AIE") values.push_back(e.tau_aie_hat);
        else if (which == "MPE" && continuous) values.push_back(e.tau_mpe_hat);
        else if (which == "DPE" && continuous) values.push_back(e.tau_dpe_hat);
        else if (which == "IPE" && continuous) values.push_back(e.tau_ipe_hat);
        else throw std::invalid_argument("unknown density estimand: " + which);
      }
      const auto [grid, dens] = marketfx::montecarlo::density_data(values);
      std::ofstream out(density_csv_path);
      if (!out) throw std::runtime_error(std::string("cannot open ") + density_csv_path);
      out.precision(17);
      out << "grid,density\n";
      for (std::size_t g = 0; g < grid.size(); ++g) out << grid[g] << ',' << dens[g] << "\n";
    }

    *summary_json_out = dup_string(marketfx::montecarlo::summary_to_json(summary).dump(2));
    if (summary_csv_out) *summary_csv_out = dup_string(marketfx::montecarlo::summary_to_csv(summary));
    return MFX_OK;
  });
}

int mfx_aie_from_elasticities(double kappa_s, double kappa_d, double tau_ade, double* out) {
  return guarded([&]() {
    if (!out) return fail(MFX_ERR_INVALID, "null argument");
    *out = marketfx::estimators::aie_from_elasticities(kappa_s, kappa_d, tau_ade);
    return MFX_OK;
  });
}

}  // extern "C"
