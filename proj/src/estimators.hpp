#pragma once

#include <array>

#include "experiment.hpp"

namespace marketfx::estimators {

using experiment::ExperimentDataset;
using model::Mat;
using model::Vec;

enum class Subset { All, Treated, Control };

struct EstimateReport {
  int n = 0;
  int num_goods = 1;
  double pi = 0.5;
  double h_n = 0.0;
  double xi_n = 0.0;
  bool continuous = false;
  double level = 0.95;

  double tau_ade_hat = 0.0;
  double tau_aie_hat = 0.0;
  double tau_mpe_hat = 0.0;  // continuous designs only
  double tau_dpe_hat = 0.0;
  double tau_ipe_hat = 0.0;

  Vec delta_y_hat;   // J
  Mat delta_z_hat;   // J x J, oriented so it estimates grad_p z
  Vec tau_z_ht;      // J
  Vec gamma_hat;     // J
  Vec b_hat;         // J, Delta_z^{-1} tau_z
  Vec dpdeta_hat;    // J, continuous designs: -b_hat / (2 xi_n)

  double sigma2_D_hat = 0.0;
  double sigma2_I_hat = 0.0;
  double sigma2_I_corrected = 0.0;
  double residual_var_hat = 0.0;  // v^2

  std::array<double, 2> ci_ade{0.0, 0.0};
  std::array<double, 2> ci_aie{0.0, 0.0};
};

// Inverse standard normal cdf (Acklam's rational approximation plus one
// Halley refinement; accurate to ~1e-15 on (0,1)).
double normal_quantile(double p);

// Signed Horvitz-Thompson contrast per column:
// (1/n) sum_i [ treated_i v_i / pi - (1 - treated_i) v_i / (1 - pi) ].
Vec ht_estimate(const Mat& values, const std::vector<int>& treated, double pi);

// (U'U)^{-1} U' targets over the requested subset of rows; J x K.
Mat regress_on_perturbations(const Mat& targets, const Mat& U, Subset subset = Subset::All,
                             const std::vector<int>& treated = {});

// Full estimator pipeline (Eqs. 7-11 plus the MPE rescaling for continuous
// designs).  Individual quantities are also exposed below.
EstimateReport estimate(const ExperimentDataset& ds, double level = 0.95);

// tau_AIE = -delta_y' delta_z^{-1} tau_z^HT, with intermediates stored.
double indirect_effect(const ExperimentDataset& ds, EstimateReport* report = nullptr);

// Consistent plug-in for sigma^2_D: empirical variance of the influence
// values s_i Y_i - (delta_y1 - delta_y0)' delta_z^{-1} Z_i with s_i the
// signed HT weight.  (Eq. 10 as displayed uses the absolute weight
// W/pi + (1-W)/(1-pi); that variant is inconsistent -- it centers at the
// wrong mean -- and is reproduced here only if `displayed_form` is set.)
double variance_direct(const ExperimentDataset& ds, bool displayed_form = false);

// sigma^2_I = b'b v^2 (Eq. 11); `corrected` adds the second-order term
// h_n^2 gamma' Omega gamma of the Remark.
double variance_indirect(const ExperimentDataset& ds, bool corrected = false);

// Normal confidence intervals: ADE +/- z sigma_D / sqrt(n) and
// AIE +/- z sigma_I / (sqrt(n) h_n); fills report.ci_ade / report.ci_aie.
void confidence_intervals(EstimateReport& report, int n, double h_n, double level);

struct MpeComponents {
  double mpe = 0.0, dpe = 0.0, ipe = 0.0;
};

// (tau_ADE + tau_AIE) / (2 xi_n) with its components; errors on binary designs.
MpeComponents mpe_estimate(const EstimateReport& report, double xi_n);

// Eq. 5: tau_AIE = kappa_s * tau_ADE / (kappa_d - kappa_s).
double aie_from_elasticities(double kappa_s, double kappa_d, double tau_ade);

nlohmann::json report_to_json(const EstimateReport& report);

}  // namespace marketfx::estimators
