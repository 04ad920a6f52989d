#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "estimators.hpp"

using marketfx::derive_seed;
using marketfx::Rng;
using namespace marketfx::estimators;
using marketfx::experiment::Design;
using marketfx::experiment::ExperimentDataset;
using marketfx::experiment::run_experiment;
using marketfx::model::make_scenario;
using marketfx::model::sample_population;
using marketfx::model::Scenario;
using marketfx::model::TreatmentKind;

namespace {

const Scenario& tech() {
  static const Scenario sc = make_scenario("tech-intervention");
  return sc;
}

// bare dataset for estimator unit tests; D/S are not consumed by estimators
ExperimentDataset make_ds(const Mat& U, const Vec& Y, const Mat& Z, std::vector<int> treated,
                          double h_n) {
  ExperimentDataset ds;
  ds.n = static_cast<int>(U.rows());
  ds.num_goods = static_cast<int>(U.cols());
  ds.pi = 0.5;
  ds.h_n = h_n;
  ds.treatment_kind = TreatmentKind::Binary;
  ds.treated = std::move(treated);
  ds.W.assign(ds.treated.begin(), ds.treated.end());
  ds.U = U;
  ds.Y = Y;
  ds.Z = Z;
  ds.D = Z;
  ds.S = Mat::Zero(ds.n, ds.num_goods);
  ds.p_tilde = Vec::Constant(ds.num_goods, 8.0);
  return ds;
}

}  // namespace

TEST_CASE("normal quantile") {
  CHECK(std::abs(normal_quantile(0.975) - 1.9599639845400545) <= 1e-9);
  CHECK(normal_quantile(0.5) == 0.0);
  CHECK(std::abs(normal_quantile(0.025) + normal_quantile(0.975)) <= 1e-12);
  CHECK(std::abs(normal_quantile(0.0001) + normal_quantile(0.9999)) <= 1e-10);
  CHECK_THROWS_AS(normal_quantile(0.0), std::invalid_argument);
  CHECK_THROWS_AS(normal_quantile(1.0), std::invalid_argument);
}

TEST_CASE("Horvitz-Thompson contrast") {
  Mat y(2, 1);
  y << 3.0, 1.0;
  CHECK(ht_estimate(y, {1, 0}, 0.5)[0] == 2.0);
  y << 1.0, 1.0;
  CHECK(ht_estimate(y, {1, 0}, 0.5)[0] == 0.0);
  CHECK_THROWS_AS(ht_estimate(y, {1, 0}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(ht_estimate(y, {1}, 0.5), std::invalid_argument);
}

TEST_CASE("HT linearity is exact at binary64") {
  // dyadic data and pi = 1/2 keep every intermediate exactly representable
  const int n = 8;
  Mat y(n, 1), z(n, 1), combo(n, 1);
  y << 1.0, 2.0, 0.5, 3.0, 1.5, 2.5, 0.25, 4.0;
  z << 2.0, 1.0, 4.0, 0.5, 1.0, 2.0, 8.0, 0.25;
  const double c = 0.5;
  combo = y + c * z;
  const std::vector<int> treated{1, 0, 1, 0, 1, 0, 1, 0};
  CHECK(ht_estimate(combo, treated, 0.5)[0] ==
        ht_estimate(y, treated, 0.5)[0] + c * ht_estimate(z, treated, 0.5)[0]);
}

TEST_CASE("regression on perturbations") {
  SUBCASE("two-point closed form") {
    Mat u(2, 1), y(2, 1);
    u << 0.1, -0.1;
    y << 1.2, 1.0;
    CHECK(regress_on_perturbations(y, u)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("regressing U on itself gives the identity exactly") {
    Mat u(4, 2);
    u << 0.25, 0.25, 0.25, -0.25, -0.25, 0.25, -0.25, -0.25;
    const Mat id = regress_on_perturbations(u, u);
    CHECK(id(0, 0) == 1.0);
    CHECK(id(1, 1) == 1.0);
    CHECK(id(0, 1) == 0.0);
    CHECK(id(1, 0) == 0.0);
  }
  SUBCASE("singular design errors") {
    Mat u = Mat::Zero(3, 1), y = Mat::Zero(3, 1);
    CHECK_THROWS_AS(regress_on_perturbations(y, u), std::runtime_error);
  }
  SUBCASE("subset regressions need the indicator") {
    Mat u(2, 1), y(2, 1);
    u << 0.1, -0.1;
    y << 1.0, 2.0;
    CHECK_THROWS_AS(regress_on_perturbations(y, u, Subset::Treated), std::invalid_argument);
  }
}

TEST_CASE("indirect effect: zero treatment pressure gives exactly zero") {
  const double h = 0.25;
  Mat u(4, 1);
  u << h, -h, -h, h;
  Vec y(4);
  y << 1.0, 2.0, 3.0, 4.0;
  // Z = U so delta_z = 1 exactly and the HT contrast of Z cancels
  const auto ds = make_ds(u, y, u, {1, 0, 1, 0}, h);
  EstimateReport rep;
  CHECK(indirect_effect(ds, &rep) == 0.0);
  CHECK(rep.tau_z_ht[0] == 0.0);
  CHECK(rep.delta_z_hat(0, 0) == 1.0);
}

TEST_CASE("indirect effect identity on a real dataset") {
  const ExperimentDataset ds = run_experiment(tech(), 800, Design{}, 4);
  EstimateReport rep;
  const double aie = indirect_effect(ds, &rep);
  CHECK(aie == rep.tau_aie_hat);
  CHECK(aie == -rep.delta_y_hat.dot(rep.b_hat));  // stored intermediates reproduce it
  CHECK(rep.gamma_hat[0] * rep.delta_z_hat(0, 0) ==
        doctest::Approx(rep.delta_y_hat[0]).epsilon(1e-12));
}

TEST_CASE("direct-effect variance on crafted data") {
  const double h = 0.25;
  Mat u(4, 1);
  u << h, -h, h, -h;
  const std::vector<int> treated{1, 1, 0, 0};
  SUBCASE("constant outcome: displayed form degenerates to zero") {
    const Vec y = Vec::Constant(4, 3.0);
    const auto ds = make_ds(u, y, u, treated, h);
    CHECK(variance_direct(ds, /*displayed_form=*/true) == 0.0);
    // the signed-weight form keeps the arm-mean contrast: variance (2c)^2
    CHECK(variance_direct(ds) == 36.0);
  }
  SUBCASE("zero outcome") {
    const auto ds = make_ds(u, Vec::Zero(4), u, treated, h);
    CHECK(variance_direct(ds) == 0.0);
  }
  SUBCASE("degenerate arms") {
    auto ds = make_ds(u, Vec::Zero(4), u, {1, 1, 1, 0}, h);
    CHECK_THROWS_AS(variance_direct(ds), std::runtime_error);
  }
}

TEST_CASE("indirect-effect variance") {
  SUBCASE("zero residuals give sigma2_I = 0") {
    const double h = 0.25;
    Mat u(4, 1);
    u << h, -h, -h, h;
    const Vec y = 2.0 * u.col(0);  // Y = Z'gamma exactly with gamma = 2
    const auto ds = make_ds(u, y, u, {1, 0, 1, 0}, h);
    CHECK(variance_indirect(ds, false) == 0.0);
    CHECK(variance_indirect(ds, true) >= 0.0);
  }
  SUBCASE("second-order correction never shrinks the variance") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const ExperimentDataset ds = run_experiment(tech(), 600, Design{}, seed);
      CHECK(variance_indirect(ds, true) >= variance_indirect(ds, false));
    }
  }
}

TEST_CASE("confidence intervals") {
  EstimateReport rep;
  rep.tau_ade_hat = 2.0;
  rep.sigma2_D_hat = 1.0;
  rep.tau_aie_hat = -1.0;
  rep.sigma2_I_corrected = 0.0;
  confidence_intervals(rep, 100, 1.0, 0.95);
  CHECK(std::abs(rep.ci_ade[0] - 1.804) <= 2e-4);
  CHECK(std::abs(rep.ci_ade[1] - 2.196) <= 2e-4);
  // zero variance: degenerate point interval
  CHECK(rep.ci_aie[0] == -1.0);
  CHECK(rep.ci_aie[1] == -1.0);
  CHECK_THROWS_AS(confidence_intervals(rep, 100, 1.0, 1.5), std::invalid_argument);
}

TEST_CASE("marginal policy effect rescaling") {
  EstimateReport rep;
  rep.continuous = true;
  rep.tau_ade_hat = 0.02;
  rep.tau_aie_hat = -0.01;
  const auto mpe = mpe_estimate(rep, 0.05);
  CHECK(mpe.dpe == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(mpe.ipe == doctest::Approx(-0.1).epsilon(1e-12));
  CHECK(mpe.mpe == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(mpe.mpe == mpe.dpe + mpe.ipe);  // componentwise identity, exact
  CHECK_THROWS_AS(mpe_estimate(rep, 0.0), std::invalid_argument);
  rep.continuous = false;
  CHECK_THROWS_AS(mpe_estimate(rep, 0.05), std::invalid_argument);
}

TEST_CASE("MPE identity holds exactly on real replications") {
  const Scenario goat = make_scenario("goat-hay-subsidy");
  const Design d = Design::for_scenario(goat);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto rep = estimate(run_experiment(goat, 300, d, seed));
    CHECK(rep.tau_mpe_hat == rep.tau_dpe_hat + rep.tau_ipe_hat);
  }
}

TEST_CASE("elasticity calculator") {
  CHECK(aie_from_elasticities(1.8, -1.5, 4.0) == doctest::Approx(7.2 / -3.3).epsilon(1e-12));
  CHECK(std::abs(aie_from_elasticities(1.8, -1.5, 4.0) - (-2.1818)) <= 1e-4);
  CHECK(aie_from_elasticities(0.0, -1.5, 4.0) == 0.0);
  CHECK(aie_from_elasticities(1.0, -1.0, 2.0) == -1.0);
  CHECK_THROWS_AS(aie_from_elasticities(1.5, 1.5, 4.0), std::invalid_argument);
}

TEST_CASE("estimators are invariant to unit reordering") {
  const ExperimentDataset ds = run_experiment(tech(), 500, Design{}, 13);
  ExperimentDataset rev = ds;
  for (int i = 0; i < ds.n; ++i) {
    const int j = ds.n - 1 - i;
    rev.W[i] = ds.W[j];
    rev.treated[i] = ds.treated[j];
    rev.U.row(i) = ds.U.row(j);
    rev.Y[i] = ds.Y[j];
    rev.D.row(i) = ds.D.row(j);
    rev.S.row(i) = ds.S.row(j);
    rev.Z.row(i) = ds.Z.row(j);
  }
  const auto a = estimate(ds), b = estimate(rev);
  CHECK(a.tau_ade_hat == doctest::Approx(b.tau_ade_hat).epsilon(1e-12));
  CHECK(a.tau_aie_hat == doctest::Approx(b.tau_aie_hat).epsilon(1e-12));
  CHECK(a.sigma2_D_hat == doctest::Approx(b.sigma2_D_hat).epsilon(1e-12));
  CHECK(a.sigma2_I_corrected == doctest::Approx(b.sigma2_I_corrected).epsilon(1e-12));
}

TEST_CASE("frozen-price HT estimate is unbiased") {
  // prices pinned at p*, no perturbations: the HT contrast should center on
  // tau_ADE = y(1, p*) - y(0, p*) within Monte Carlo error
  const Vec p_star = Vec::Constant(1, 25.0 / 3.0);
  const double truth = 2.0 / 9.0;
  const int draws = 10000, n = 200;
  std::vector<double> est(draws);
  for (int d = 0; d < draws; ++d) {
    const auto pop = sample_population(tech(), n, derive_seed(555, 2 * d));
    Rng wr(derive_seed(555, 2 * d + 1));
    Mat y(n, 1);
    std::vector<int> treated(n);
    for (int i = 0; i < n; ++i) {
      treated[i] = wr.bernoulli(0.5) ? 1 : 0;
      y(i, 0) = pop.units[i].outcome(treated[i], p_star);
    }
    est[d] = ht_estimate(y, treated, 0.5)[0];
  }
  double mean = 0.0;
  for (double e : est) mean += e;
  mean /= draws;
  double var = 0.0;
  for (double e : est) var += (e - mean) * (e - mean);
  const double mcse = std::sqrt(var / (draws - 1) / draws);
  CHECK(std::abs(mean - truth) <= 3.0 * mcse);
}

TEST_CASE("estimator consistency across sample sizes") {
  const double ade_star = 2.0 / 9.0;
  const double aie_star = -0.23280423280423;
  double se_ade_small = 0.0, se_ade_big = 0.0, se_aie_small = 0.0, se_aie_big = 0.0;
  std::vector<double> gamma_big, dz_mid;
  const int seeds = 500;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    const auto small = estimate(run_experiment(tech(), 500, Design{}, seed));
    const auto big = estimate(run_experiment(tech(), 8000, Design{}, 50000 + seed));
    se_ade_small += (small.tau_ade_hat - ade_star) * (small.tau_ade_hat - ade_star);
    se_ade_big += (big.tau_ade_hat - ade_star) * (big.tau_ade_hat - ade_star);
    se_aie_small += (small.tau_aie_hat - aie_star) * (small.tau_aie_hat - aie_star);
    se_aie_big += (big.tau_aie_hat - aie_star) * (big.tau_aie_hat - aie_star);
  }
  CHECK(se_ade_big < se_ade_small);  // RMSE shrinks with n
  CHECK(se_aie_big < se_aie_small);

  for (std::uint64_t seed = 1; seed <= 101; ++seed) {
    gamma_big.push_back(estimate(run_experiment(tech(), 10000, Design{}, seed)).gamma_hat[0]);
    dz_mid.push_back(estimate(run_experiment(tech(), 2500, Design{}, seed)).delta_z_hat(0, 0));
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  CHECK(std::abs(median(gamma_big) - (-1.7460)) <= 0.1746);  // within 10%
  CHECK(std::abs(median(dz_mid) - (-0.42)) <= 0.15);
}

TEST_CASE("report serialization") {
  const auto rep = estimate(run_experiment(tech(), 400, Design{}, 2));
  const auto j = report_to_json(rep);
  CHECK(j.at("tau_ade_hat").get<double>() == rep.tau_ade_hat);
  CHECK(j.at("tau_aie_hat").get<double>() == rep.tau_aie_hat);
  CHECK(j.at("sigma2_I_corrected").get<double>() == rep.sigma2_I_corrected);
  CHECK(j.at("ci_ade")[0].get<double>() == rep.ci_ade[0]);
  CHECK(j.at("gamma_hat")[0].get<double>() == rep.gamma_hat[0]);
  CHECK_FALSE(j.contains("tau_mpe_hat"));  // binary design
}
