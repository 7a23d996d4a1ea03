#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "conspace/panel.hpp"

namespace conspace {

// Regressor names: omega, log_dist, omega_x_logdist, omega_x_covid,
// omega_x_recovery. Fixed-effect factors: dest, res, amenity, period.
struct RegressionSpec {
    std::string name;
    std::vector<std::string> regressors;
    std::vector<std::string> fixed_effects;
    std::vector<std::string> cluster_dims = {"dest", "res"};
    double tol = 1e-8;
    int max_iter = 500;
};

struct FitResult {
    RegressionSpec spec;
    std::vector<std::string> coef_names;
    Eigen::VectorXd beta;
    Eigen::MatrixXd vcov;        // two-way clustered
    Eigen::VectorXd se;
    std::vector<std::string> stars;  // "***" 1%, "**" 5%, "*" 10%, "" otherwise
    std::size_t n_obs = 0;           // after singleton drop
    std::size_t n_dropped_singletons = 0;
    double r2 = 0.0;
    double within_r2 = 0.0;
    int demean_iterations = 0;
    bool vcov_repaired = false;      // negative eigenvalues truncated
    Standardization standardization; // moments of this estimation sample
};

// Alternating projections: repeatedly removes group means for each factor
// (fixed order) from every column until the largest absolute change in a
// sweep is below tol. Returns the number of sweeps; throws ConvergenceError
// with the last delta if max_iter sweeps are not enough.
int within_transform(Eigen::MatrixXd& columns,
                     const std::vector<std::vector<int>>& factors,
                     double tol = 1e-8,
                     int max_iter = 500);

struct OlsResult {
    Eigen::VectorXd beta;
    Eigen::VectorXd residuals;
    Eigen::MatrixXd xtx_inv;
};

// Least squares via column-pivoted Householder QR. Rank deficiency raises
// RankDeficiencyError naming the dependent columns.
OlsResult ols(const Eigen::VectorXd& y,
              const Eigen::MatrixXd& X,
              const std::vector<std::string>& names);

// Two-way clustered covariance by inclusion-exclusion
// V = V_A + (V_B - V_AB), each term a cluster-robust sandwich with
// small-sample factor G/(G-1) * (n-1)/(n-k). If the result is not PSD its
// negative eigenvalues are truncated to zero and *repaired is set.
Eigen::MatrixXd cluster_cov_twoway(const Eigen::MatrixXd& X,
                                   const Eigen::VectorXd& residuals,
                                   const std::vector<int>& cluster_a,
                                   const std::vector<int>& cluster_b,
                                   bool* repaired = nullptr);

// Full pipeline: re-standardize on the estimation sample, drop singleton FE
// groups, demean, OLS, clustered covariance, fit statistics.
FitResult fit(const RegressionSpec& spec, const Panel& panel);

struct MarginalCurve {
    std::vector<double> distance_km;
    std::vector<double> log_dist_std;  // grid mapped through the fit's standardization
    std::vector<double> effect;        // beta_omega + beta_interaction * x
    std::vector<double> se;
};

// Effect of omega at given distances, using the omega / omega_x_logdist
// coefficients and their covariance. Grid defaults to the interval
// boundaries {0, 1, 2, 5, 10, 20} km.
MarginalCurve marginal_effects(const FitResult& fit,
                               std::vector<double> distance_grid_km = {});

void write_marginal_csv(const MarginalCurve& curve, const std::filesystem::path& path);

// Machine-readable fit report plus a formatted table.
void write_fit_json(const FitResult& fit, const std::filesystem::path& path);
std::string format_fit_table(const FitResult& fit);

}  // namespace conspace
