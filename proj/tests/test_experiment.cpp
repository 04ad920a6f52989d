#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "experiment.hpp"

using marketfx::Rng;
using namespace marketfx::experiment;
using marketfx::model::make_scenario;
using marketfx::model::Scenario;

namespace {

const Scenario& tech() {
  static const Scenario sc = make_scenario("tech-intervention");
  return sc;
}

}  // namespace

TEST_CASE("design validation") {
  Design d;
  CHECK_NOTHROW(validate_design(d));
  d.pi = 1.0;
  CHECK_THROWS_AS(validate_design(d), std::invalid_argument);
  d.pi = 0.5;
  d.h_exponent = 0.25;  // boundary excluded
  CHECK_THROWS_AS(validate_design(d), std::invalid_argument);
  d.h_exponent = 0.26;
  CHECK_NOTHROW(validate_design(d));
  d.h_scale = 0.0;
  CHECK_THROWS_AS(validate_design(d), std::invalid_argument);
}

TEST_CASE("design defaults per scenario") {
  const Design b = Design::for_scenario(tech());
  CHECK(b.treatment_kind == marketfx::model::TreatmentKind::Binary);
  CHECK(b.pi == 0.5);
  CHECK(b.h_scale == 2.2);
  const Design c = Design::for_scenario(make_scenario("goat-hay-subsidy"));
  CHECK(c.treatment_kind == marketfx::model::TreatmentKind::Continuous);
  CHECK(c.eta == 0.0);
  CHECK(c.h_scale == 4.0);
  CHECK(c.xi_scale == 2.0);
  // h_n = c n^(-alpha) decreases in n
  CHECK(b.h_n(100) > b.h_n(200));
  CHECK(b.h_n(200) > b.h_n(400));
}

TEST_CASE("treatment assignment") {
  SUBCASE("binary concentration") {
    Design d;
    Rng rng(5);
    const int n = 1000000;
    const auto w = assign_treatments(n, d, rng);
    double mean = 0.0;
    for (double x : w) {
      CHECK((x == 0.0 || x == 1.0));
      mean += x;
    }
    CHECK(std::abs(mean / n - 0.5) <= 0.002);
  }
  SUBCASE("continuous two-point support") {
    Design d;
    d.treatment_kind = marketfx::model::TreatmentKind::Continuous;
    d.eta = 0.0;
    d.xi_scale = 0.5;
    const int n = 1000;
    const double xi = d.xi_n(n);
    Rng rng(6);
    for (double x : assign_treatments(n, d, rng)) CHECK(std::abs(x) == xi);
  }
  SUBCASE("rejects invalid inputs") {
    Design d;
    Rng rng(1);
    CHECK_THROWS_AS(assign_treatments(1, d, rng), std::invalid_argument);
    d.pi = 1.0;
    CHECK_THROWS_AS(assign_treatments(4, d, rng), std::invalid_argument);
  }
}

TEST_CASE("price perturbations") {
  Rng rng(9);
  CHECK_THROWS_AS(draw_perturbations(10, 1, 0.0, rng), std::invalid_argument);
  const Mat u = draw_perturbations(1000000, 1, 0.1, rng);
  double mean = 0.0;
  for (int i = 0; i < u.rows(); ++i) {
    CHECK(std::abs(u(i, 0)) == 0.1);
    mean += u(i, 0);
  }
  CHECK(std::abs(mean / u.rows()) <= 0.0005);

  Rng a(77), b(77);
  const Mat ua = draw_perturbations(2, 2, 0.1, a);
  const Mat ub = draw_perturbations(2, 2, 0.1, b);
  CHECK((ua.array() == ub.array()).all());
}

TEST_CASE("run_experiment contract") {
  Design d;
  const ExperimentDataset ds = run_experiment(tech(), 2500, d, 11);
  CHECK(ds.n == 2500);
  CHECK(ds.clearing_residual <= 1.2 / 2500);
  CHECK(ds.h_n == d.h_n(2500));
  for (int i = 0; i < ds.n; ++i) {
    CHECK((ds.D(i, 0) == 0.0 || ds.D(i, 0) == 1.0));
    CHECK((ds.S(i, 0) == 0.0 || ds.S(i, 0) == 1.0 || ds.S(i, 0) == 1.2));
    CHECK(ds.Z(i, 0) == ds.D(i, 0) - ds.S(i, 0));
    CHECK(std::abs(ds.U(i, 0)) == ds.h_n);
    CHECK(ds.treated[i] == (ds.W[i] > 0.5 ? 1 : 0));
  }

  // bit-identical reruns
  const ExperimentDataset ds2 = run_experiment(tech(), 2500, d, 11);
  CHECK(ds.p_tilde[0] == ds2.p_tilde[0]);
  CHECK((ds.Y.array() == ds2.Y.array()).all());
  CHECK((ds.U.array() == ds2.U.array()).all());

  // sub-streams: changing pi leaves the perturbation draw untouched
  Design d2 = d;
  d2.pi = 0.3;
  const ExperimentDataset ds3 = run_experiment(tech(), 2500, d2, 11);
  CHECK((ds.U.array() == ds3.U.array()).all());

  // design kind must match the scenario
  Design cont;
  cont.treatment_kind = marketfx::model::TreatmentKind::Continuous;
  CHECK_THROWS_AS(run_experiment(tech(), 100, cont, 1), std::invalid_argument);
  CHECK_THROWS_AS(run_experiment(tech(), 1, d, 1), std::invalid_argument);
}

TEST_CASE("continuous experiments populate xi_n and both arms") {
  const Scenario goat = make_scenario("goat-hay-subsidy");
  const Design d = Design::for_scenario(goat);
  const ExperimentDataset ds = run_experiment(goat, 400, d, 3);
  CHECK(ds.xi_n == d.xi_n(400));
  int up = 0;
  for (int i = 0; i < ds.n; ++i) {
    CHECK(std::abs(ds.W[i]) == ds.xi_n);
    up += ds.treated[i];
  }
  CHECK(up > 0);
  CHECK(up < ds.n);
}

TEST_CASE("price dispersion shrinks at the root-n rate") {
  Design d;
  std::vector<double> p_small, p_big;
  for (std::uint64_t seed = 1; seed <= 500; ++seed) {
    p_small.push_back(run_experiment(tech(), 2500, d, seed).p_tilde[0]);
    p_big.push_back(run_experiment(tech(), 10000, d, 100000 + seed).p_tilde[0]);
  }
  auto sd = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= v.size();
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / (v.size() - 1));
  };
  const double ratio = sd(p_small) / sd(p_big);
  CHECK(ratio >= 1.6);
  CHECK(ratio <= 2.6);
}

TEST_CASE("dataset CSV and metadata") {
  Design d;
  const ExperimentDataset ds = run_experiment(tech(), 50, d, 21);
  const std::string path = "/tmp/mfx_test_dataset.csv";
  write_dataset_csv(ds, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "i,W,U_1,Y,D_1,S_1,Z_1");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 50);
  in.close();
  std::remove(path.c_str());

  const auto meta = dataset_metadata(ds);
  CHECK(meta.at("scenario") == "tech-intervention");
  CHECK(meta.at("n") == 50);
  CHECK(meta.at("pi") == 0.5);
  CHECK(meta.at("h_n").get<double>() == ds.h_n);
  CHECK(meta.at("seed") == 21);
  CHECK(meta.at("p_tilde").size() == 1);
  CHECK(meta.at("p_tilde")[0].get<double>() == ds.p_tilde[0]);
}
