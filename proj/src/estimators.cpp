#include "estimators.hpp"

#include <cmath>
#include <stdexcept>

namespace marketfx::estimators {

namespace {

constexpr double kCondLimit = 1e8;

void check_arms(const std::vector<int>& treated) {
  int n1 = 0;
  for (int t : treated) n1 += t;
  const int n0 = static_cast<int>(treated.size()) - n1;
  if (n1 < 2 || n0 < 2)
    throw std::runtime_error("degenerate treatment assignment: need at least 2 units per arm");
}

// inverse of delta_z with a condition-number guard
Mat inverse_checked(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  if (!(smin > 0.0) || sv(0) / smin > kCondLimit)
    throw std::runtime_error(
        "delta_z is numerically singular (condition number " +
        std::to_string(smin > 0.0 ? sv(0) / smin : INFINITY) +
        "); consider a larger perturbation size h_n or sample size n");
  return svd.solve(Mat::Identity(m.rows(), m.cols()));
}

std::vector<int> require_treated(const ExperimentDataset& ds) { return ds.treated; }

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("quantile level must be in (0, 1)");
  // Acklam's approximation
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // one Halley step against the exact cdf
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

Vec ht_estimate(const Mat& values, const std::vector<int>& treated, double pi) {
  const int n = static_cast<int>(values.rows());
  if (static_cast<int>(treated.size()) != n)
    throw std::invalid_argument("treatment indicator length must match values");
  if (!(pi > 0.0 && pi < 1.0)) throw std::invalid_argument("pi must lie strictly in (0, 1)");
  Vec acc = Vec::Zero(values.cols());
  for (int i = 0; i < n; ++i) {
    const double s = treated[i] ? 1.0 / pi : -1.0 / (1.0 - pi);
    acc += s * values.row(i).transpose();
  }
  return acc / n;
}

Mat regress_on_perturbations(const Mat& targets, const Mat& U, Subset subset,
                             const std::vector<int>& treated) {
  const int n = static_cast<int>(U.rows()), J = static_cast<int>(U.cols());
  if (targets.rows() != n) throw std::invalid_argument("targets and U row counts differ");
  if (subset != Subset::All && static_cast<int>(treated.size()) != n)
    throw std::invalid_argument("subset regression needs the treatment indicator");

  Mat utu = Mat::Zero(J, J);
  Mat uty = Mat::Zero(J, targets.cols());
  for (int i = 0; i < n; ++i) {
    if (subset == Subset::Treated && !treated[i]) continue;
    if (subset == Subset::Control && treated[i]) continue;
    utu.noalias() += U.row(i).transpose() * U.row(i);
    uty.noalias() += U.row(i).transpose() * targets.row(i);
  }
  Eigen::FullPivLU<Mat> lu(utu);
  if (!lu.isInvertible())
    throw std::runtime_error("U'U is singular over the requested subset (rank " +
                             std::to_string(lu.rank()) + ")");
  return lu.solve(uty);
}

double indirect_effect(const ExperimentDataset& ds, EstimateReport* report) {
  const auto treated = require_treated(ds);
  check_arms(treated);
  // raw regression coefficients are (d target / d price)^T; transpose so the
  // stored matrix estimates grad_p z
  const Mat delta_z = regress_on_perturbations(ds.Z, ds.U).transpose();
  const Vec delta_y = regress_on_perturbations(ds.Y, ds.U);
  const Vec tau_z = ht_estimate(ds.Z, treated, ds.pi);
  const Mat delta_z_inv = inverse_checked(delta_z);
  const Vec b = delta_z_inv * tau_z;
  const double tau_aie = -delta_y.dot(b);
  if (report) {
    report->delta_y_hat = delta_y;
    report->delta_z_hat = delta_z;
    report->tau_z_ht = tau_z;
    report->b_hat = b;
    report->gamma_hat = delta_z_inv * delta_y;
    report->tau_aie_hat = tau_aie;
  }
  return tau_aie;
}

double variance_direct(const ExperimentDataset& ds, bool displayed_form) {
  const auto treated = require_treated(ds);
  check_arms(treated);
  const int n = ds.n;
  const Mat delta_z = regress_on_perturbations(ds.Z, ds.U).transpose();
  const Vec dy1 = regress_on_perturbations(ds.Y, ds.U, Subset::Treated, treated);
  const Vec dy0 = regress_on_perturbations(ds.Y, ds.U, Subset::Control, treated);
  // kappa' Z_i with kappa' = (delta_y1 - delta_y0)' delta_z^{-1}
  const Vec kappa = inverse_checked(delta_z).transpose() * (dy1 - dy0);

  Vec g(n);
  for (int i = 0; i < n; ++i) {
    const double adj = kappa.dot(ds.Z.row(i));
    if (displayed_form) {
      // Eq. 10 verbatim: absolute HT weight
      const double wgt = treated[i] ? 1.0 / ds.pi : 1.0 / (1.0 - ds.pi);
      const double a_i = (treated[i] ? -ds.pi : (1.0 - ds.pi)) * adj;
      g[i] = wgt * (ds.Y[i] + a_i);
    } else {
      // signed HT weight: consistent for sigma^2_D
      const double s = treated[i] ? 1.0 / ds.pi : -1.0 / (1.0 - ds.pi);
      g[i] = s * ds.Y[i] - adj;
    }
  }
  const double mean = g.mean();
  return (g.array() - mean).square().sum() / n;
}

double variance_indirect(const ExperimentDataset& ds, bool corrected) {
  const auto treated = require_treated(ds);
  check_arms(treated);
  EstimateReport tmp;
  indirect_effect(ds, &tmp);
  const int n = ds.n;
  double v2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = ds.Y[i] - tmp.gamma_hat.dot(ds.Z.row(i));
    v2 += r * r;
  }
  v2 /= n;
  double sigma2 = tmp.b_hat.squaredNorm() * v2;
  if (corrected) {
    const Mat dz1 = regress_on_perturbations(ds.Z, ds.U, Subset::Treated, treated).transpose();
    const Mat dz0 = regress_on_perturbations(ds.Z, ds.U, Subset::Control, treated).transpose();
    const Mat m = (dz1 - dz0) * inverse_checked(tmp.delta_z_hat);
    // empirical covariance of the signed-weight analogue of Eq. 10 for Z
    Mat gz(n, ds.num_goods);
    for (int i = 0; i < n; ++i) {
      const double s = treated[i] ? 1.0 / ds.pi : -1.0 / (1.0 - ds.pi);
      gz.row(i) = s * ds.Z.row(i) - (m * ds.Z.row(i).transpose()).transpose();
    }
    const Eigen::RowVectorXd mean = gz.colwise().mean();
    const Mat centered = gz.rowwise() - mean;
    const Mat omega = centered.transpose() * centered / n;
    sigma2 += ds.h_n * ds.h_n * tmp.gamma_hat.dot(omega * tmp.gamma_hat);
  }
  return sigma2;
}

void confidence_intervals(EstimateReport& report, int n, double h_n, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must be in (0, 1)");
  const double z = normal_quantile(0.5 + 0.5 * level);
  const double half_d = z * std::sqrt(report.sigma2_D_hat / n);
  // the corrected variance drives the reported interval (Remark coverage)
  const double half_i = z * std::sqrt(report.sigma2_I_corrected) / (std::sqrt(double(n)) * h_n);
  report.level = level;
  report.ci_ade = {report.tau_ade_hat - half_d, report.tau_ade_hat + half_d};
  report.ci_aie = {report.tau_aie_hat - half_i, report.tau_aie_hat + half_i};
}

MpeComponents mpe_estimate(const EstimateReport& report, double xi_n) {
  if (!report.continuous)
    throw std::invalid_argument("mpe_estimate requires a continuous-treatment design");
  if (!(xi_n > 0.0)) throw std::invalid_argument("xi_n must be positive");
  MpeComponents out;
  out.dpe = report.tau_ade_hat / (2.0 * xi_n);
  out.ipe = report.tau_aie_hat / (2.0 * xi_n);
  out.mpe = out.dpe + out.ipe;
  return out;
}

double aie_from_elasticities(double kappa_s, double kappa_d, double tau_ade) {
  if (kappa_d == kappa_s)
    throw std::invalid_argument(
        "kappa_d must differ from kappa_s (perfectly offsetting elasticities)");
  return kappa_s * tau_ade / (kappa_d - kappa_s);
}

EstimateReport estimate(const ExperimentDataset& ds, double level) {
  EstimateReport rep;
  rep.n = ds.n;
  rep.num_goods = ds.num_goods;
  rep.pi = ds.pi;
  rep.h_n = ds.h_n;
  rep.xi_n = ds.xi_n;
  rep.continuous = ds.treatment_kind == model::TreatmentKind::Continuous;

  const auto treated = require_treated(ds);
  check_arms(treated);

  rep.tau_ade_hat = ht_estimate(ds.Y, treated, ds.pi)[0];
  indirect_effect(ds, &rep);
  rep.sigma2_D_hat = variance_direct(ds);
  rep.sigma2_I_hat = variance_indirect(ds, false);
  rep.sigma2_I_corrected = variance_indirect(ds, true);
  {  // v^2 for the report
    double v2 = 0.0;
    for (int i = 0; i < ds.n; ++i) {
      const double r = ds.Y[i] - rep.gamma_hat.dot(ds.Z.row(i));
      v2 += r * r;
    }
    rep.residual_var_hat = v2 / ds.n;
  }
  confidence_intervals(rep, ds.n, ds.h_n, level);

  if (rep.continuous) {
    const auto mpe = mpe_estimate(rep, ds.xi_n);
    rep.tau_mpe_hat = mpe.mpe;
    rep.tau_dpe_hat = mpe.dpe;
    rep.tau_ipe_hat = mpe.ipe;
    rep.dpdeta_hat = -rep.b_hat / (2.0 * ds.xi_n);
  }
  return rep;
}

nlohmann::json report_to_json(const EstimateReport& r) {
  auto vec = [](const Vec& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  nlohmann::json j;
  j["n"] = r.n;
  j["num_goods"] = r.num_goods;
  j["pi"] = r.pi;
  j["h_n"] = r.h_n;
  j["level"] = r.level;
  j["tau_ade_hat"] = r.tau_ade_hat;
  j["tau_aie_hat"] = r.tau_aie_hat;
  j["delta_y_hat"] = vec(r.delta_y_hat);
  j["tau_z_ht"] = vec(r.tau_z_ht);
  j["gamma_hat"] = vec(r.gamma_hat);
  j["b_hat"] = vec(r.b_hat);
  j["delta_z_hat"] = std::vector<std::vector<double>>();
  for (int row = 0; row < r.delta_z_hat.rows(); ++row)
    j["delta_z_hat"].push_back(vec(r.delta_z_hat.row(row).transpose()));
  j["sigma2_D_hat"] = r.sigma2_D_hat;
  j["sigma2_I_hat"] = r.sigma2_I_hat;
  j["sigma2_I_corrected"] = r.sigma2_I_corrected;
  j["residual_var_hat"] = r.residual_var_hat;
  j["ci_ade"] = r.ci_ade;
  j["ci_aie"] = r.ci_aie;
  if (r.continuous) {
    j["xi_n"] = r.xi_n;
    j["tau_mpe_hat"] = r.tau_mpe_hat;
    j["tau_dpe_hat"] = r.tau_dpe_hat;
    j["tau_ipe_hat"] = r.tau_ipe_hat;
    j["dpdeta_hat"] = vec(r.dpdeta_hat);
  }
  return j;
}

}  // namespace marketfx::estimators
