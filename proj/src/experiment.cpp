#include "experiment.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace marketfx::experiment {

void validate_design(const Design& design) {
  if (!(design.pi > 0.0 && design.pi < 1.0))
    throw std::invalid_argument("pi must lie strictly in (0, 1)");
  if (!(design.h_scale > 0.0)) throw std::invalid_argument("h_scale must be positive");
  if (!(design.h_exponent > 0.25 && design.h_exponent < 0.5))
    throw std::invalid_argument("h_exponent must lie strictly inside (1/4, 1/2)");
  if (design.treatment_kind == TreatmentKind::Continuous) {
    if (!(design.xi_scale > 0.0)) throw std::invalid_argument("xi_scale must be positive");
    if (!(design.xi_exponent > 0.25 && design.xi_exponent < 0.5))
      throw std::invalid_argument("xi_exponent must lie strictly inside (1/4, 1/2)");
  }
}

std::vector<double> assign_treatments(int n, const Design& design, marketfx::Rng& rng) {
  if (n < 2) throw std::invalid_argument("need at least 2 units");
  validate_design(design);
  std::vector<double> w(n);
  if (design.treatment_kind == TreatmentKind::Binary) {
    for (int i = 0; i < n; ++i) w[i] = rng.bernoulli(design.pi) ? 1.0 : 0.0;
  } else {
    const double xi = design.xi_n(n);
    for (int i = 0; i < n; ++i)
      w[i] = design.eta + (rng.bernoulli(design.pi) ? xi : -xi);
  }
  return w;
}

Mat draw_perturbations(int n, int num_goods, double h, marketfx::Rng& rng) {
  if (!(h > 0.0)) throw std::invalid_argument("perturbation size must be positive");
  Mat u(n, num_goods);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < num_goods; ++j) u(i, j) = h * rng.rademacher();
  return u;
}

ExperimentDataset run_experiment(const Scenario& sc, int n, const Design& design,
                                 std::uint64_t seed,
                                 const equilibrium::SolverSettings& settings) {
  if (n < 2) throw std::invalid_argument("need at least 2 units");
  validate_design(design);
  if (design.treatment_kind != sc.treatment_kind)
    throw std::invalid_argument("design treatment kind does not match the scenario");

  const int J = sc.num_goods;
  ExperimentDataset ds;
  ds.n = n;
  ds.num_goods = J;
  ds.pi = design.pi;
  ds.h_n = design.h_n(n);
  ds.eta = design.eta;
  ds.treatment_kind = design.treatment_kind;
  ds.seed = seed;
  ds.scenario_id = sc.id;

  // independent sub-streams: 0 = population, 1 = treatments, 2 = perturbations
  model::Population pop = model::sample_population(sc, n, derive_seed(seed, 0));
  marketfx::Rng w_rng(derive_seed(seed, 1));
  marketfx::Rng u_rng(derive_seed(seed, 2));

  ds.W = assign_treatments(n, design, w_rng);
  ds.treated.resize(n);
  if (design.treatment_kind == TreatmentKind::Binary) {
    for (int i = 0; i < n; ++i) ds.treated[i] = ds.W[i] > 0.5 ? 1 : 0;
  } else {
    ds.xi_n = design.xi_n(n);
    for (int i = 0; i < n; ++i) ds.treated[i] = ds.W[i] > design.eta ? 1 : 0;
  }
  ds.U = draw_perturbations(n, J, ds.h_n, u_rng);

  const auto price = equilibrium::solve_finite_sample_price(pop, ds.W, ds.U, settings);
  ds.p_tilde = price.p;
  ds.clearing_residual = price.objective;

  ds.Y.resize(n);
  ds.D.resize(n, J);
  ds.S.resize(n, J);
  ds.Z.resize(n, J);
  for (int i = 0; i < n; ++i) {
    const Vec q = ds.p_tilde + ds.U.row(i).transpose();
    ds.Y[i] = pop.units[i].outcome(ds.W[i], q);
    ds.D.row(i) = pop.units[i].demand(ds.W[i], q).transpose();
    ds.S.row(i) = pop.units[i].supply(ds.W[i], q).transpose();
  }
  ds.Z = ds.D - ds.S;
  return ds;
}

void write_dataset_csv(const ExperimentDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.precision(17);
  const int J = ds.num_goods;
  out << "i,W";
  for (int j = 1; j <= J; ++j) out << ",U_" << j;
  out << ",Y";
  for (int j = 1; j <= J; ++j) out << ",D_" << j;
  for (int j = 1; j <= J; ++j) out << ",S_" << j;
  for (int j = 1; j <= J; ++j) out << ",Z_" << j;
  out << "\n";
  for (int i = 0; i < ds.n; ++i) {
    out << (i + 1) << ',' << ds.W[i];
    for (int j = 0; j < J; ++j) out << ',' << ds.U(i, j);
    out << ',' << ds.Y[i];
    for (int j = 0; j < J; ++j) out << ',' << ds.D(i, j);
    for (int j = 0; j < J; ++j) out << ',' << ds.S(i, j);
    for (int j = 0; j < J; ++j) out << ',' << ds.Z(i, j);
    out << "\n";
  }
}

nlohmann::json dataset_metadata(const ExperimentDataset& ds) {
  nlohmann::json meta;
  meta["scenario"] = ds.scenario_id;
  meta["n"] = ds.n;
  meta["num_goods"] = ds.num_goods;
  meta["pi"] = ds.pi;
  meta["h_n"] = ds.h_n;
  meta["eta"] = ds.eta;
  meta["seed"] = ds.seed;
  meta["treatment_kind"] =
      ds.treatment_kind == TreatmentKind::Binary ? "binary" : "continuous";
  if (ds.treatment_kind == TreatmentKind::Continuous) meta["xi_n"] = ds.xi_n;
  meta["p_tilde"] = std::vector<double>(ds.p_tilde.data(), ds.p_tilde.data() + ds.p_tilde.size());
  meta["clearing_residual"] = ds.clearing_residual;
  return meta;
}

}  // namespace marketfx::experiment
