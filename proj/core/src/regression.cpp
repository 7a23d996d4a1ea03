#include "conspace/regression.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "conspace/csv.hpp"

namespace conspace {

namespace {

// Two-sided normal critical values for the 1% / 5% / 10% star convention.
constexpr double kCrit1 = 2.5758293035489004;
constexpr double kCrit5 = 1.9599639845400545;
constexpr double kCrit10 = 1.6448536269514722;

std::string stars_for(double t_abs) {
    if (t_abs >= kCrit1) return "***";
    if (t_abs >= kCrit5) return "**";
    if (t_abs >= kCrit10) return "*";
    return "";
}

int n_levels(const std::vector<int>& codes) {
    int max_code = -1;
    for (int c : codes) max_code = std::max(max_code, c);
    return max_code + 1;
}

}  // namespace

int within_transform(Eigen::MatrixXd& columns,
                     const std::vector<std::vector<int>>& factors,
                     double tol,
                     int max_iter) {
    const Eigen::Index n = columns.rows();
    if (n == 0) throw InvalidInputError("within_transform: no rows");
    for (const auto& f : factors) {
        if (static_cast<Eigen::Index>(f.size()) != n) {
            throw InvalidInputError("within_transform: factor length does not match rows");
        }
    }
    if (factors.empty()) return 0;

    std::vector<int> levels;
    std::vector<Eigen::VectorXd> group_counts;
    for (const auto& f : factors) {
        const int k = n_levels(f);
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
        for (int code : f) {
            if (code < 0) throw InvalidInputError("within_transform: negative factor code");
            counts(code) += 1.0;
        }
        levels.push_back(k);
        group_counts.push_back(std::move(counts));
    }

    double delta = std::numeric_limits<double>::infinity();
    for (int iter = 1; iter <= max_iter; ++iter) {
        delta = 0.0;
        for (std::size_t f = 0; f < factors.size(); ++f) {
            Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(levels[f], columns.cols());
            const auto& codes = factors[f];
            for (Eigen::Index r = 0; r < n; ++r) {
                sums.row(codes[static_cast<std::size_t>(r)]) += columns.row(r);
            }
            sums.array().colwise() /= group_counts[f].array();
            for (Eigen::Index r = 0; r < n; ++r) {
                const auto mean = sums.row(codes[static_cast<std::size_t>(r)]);
                delta = std::max(delta, mean.cwiseAbs().maxCoeff());
                columns.row(r) -= mean;
            }
        }
        if (delta < tol) return iter;
    }
    throw ConvergenceError("within_transform: no convergence after "
                           + std::to_string(max_iter) + " sweeps (last delta "
                           + std::to_string(delta) + ")",
                           delta);
}

OlsResult ols(const Eigen::VectorXd& y,
              const Eigen::MatrixXd& X,
              const std::vector<std::string>& names) {
    if (y.rows() != X.rows()) throw InvalidInputError("ols: y and X row counts differ");
    if (X.rows() < X.cols()) throw InvalidInputError("ols: fewer rows than regressors");

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    const Eigen::Index rank = qr.rank();
    if (rank < X.cols()) {
        // Columns permuted past the numerical rank are the dependent ones.
        const auto perm = qr.colsPermutation().indices();
        std::string culprits;
        for (Eigen::Index k = rank; k < X.cols(); ++k) {
            if (!culprits.empty()) culprits += ", ";
            const auto idx = static_cast<std::size_t>(perm(k));
            culprits += idx < names.size() ? names[idx] : ("col" + std::to_string(idx));
        }
        throw RankDeficiencyError("ols: rank-deficient design, dependent columns: "
                                  + culprits);
    }

    OlsResult out;
    out.beta = qr.solve(y);
    out.residuals = y - X * out.beta;

    // (X'X)^{-1} from the QR factors: X P = Q R  =>  (X'X)^{-1} = P R^{-1} R^{-T} P'.
    const Eigen::MatrixXd r_full = qr.matrixR()
        .topLeftCorner(X.cols(), X.cols())
        .template triangularView<Eigen::Upper>();
    const Eigen::MatrixXd r_inv = r_full.inverse();
    const Eigen::MatrixXd inv_perm = r_inv * r_inv.transpose();
    const auto perm = qr.colsPermutation();
    out.xtx_inv = perm * inv_perm * perm.transpose();
    return out;
}

namespace {

// First-occurrence coding keeps group enumeration order identical whenever
// the underlying partitions are identical (the A=B collapse relies on it).
std::vector<int> encode_first_occurrence(const std::vector<long long>& raw) {
    std::vector<int> codes(raw.size());
    std::map<long long, int> seen;
    int next = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        auto [it, inserted] = seen.emplace(raw[i], next);
        if (inserted) ++next;
        codes[i] = it->second;
    }
    return codes;
}

Eigen::MatrixXd cluster_meat(const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& u,
                             const std::vector<int>& codes,
                             int n_groups) {
    const Eigen::Index k = X.cols();
    Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(n_groups, k);
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        scores.row(codes[static_cast<std::size_t>(r)]) += u(r) * X.row(r);
    }
    return scores.transpose() * scores;
}

Eigen::MatrixXd sandwich(const Eigen::MatrixXd& xtx_inv,
                         const Eigen::MatrixXd& meat,
                         int n_groups,
                         Eigen::Index n,
                         Eigen::Index k) {
    const double g = static_cast<double>(n_groups);
    const double correction = g / (g - 1.0)
        * (static_cast<double>(n) - 1.0) / (static_cast<double>(n) - static_cast<double>(k));
    return correction * xtx_inv * meat * xtx_inv;
}

}  // namespace

Eigen::MatrixXd cluster_cov_twoway(const Eigen::MatrixXd& X,
                                   const Eigen::VectorXd& residuals,
                                   const std::vector<int>& cluster_a,
                                   const std::vector<int>& cluster_b,
                                   bool* repaired) {
    const Eigen::Index n = X.rows();
    const Eigen::Index k = X.cols();
    if (static_cast<Eigen::Index>(cluster_a.size()) != n
        || static_cast<Eigen::Index>(cluster_b.size()) != n) {
        throw InvalidInputError("cluster_cov_twoway: cluster id vectors must align with rows");
    }

    // Pair-code the intersection clustering with first-occurrence order.
    std::vector<long long> a_raw(cluster_a.begin(), cluster_a.end());
    std::vector<long long> b_raw(cluster_b.begin(), cluster_b.end());
    std::vector<long long> ab_raw(cluster_a.size());
    for (std::size_t i = 0; i < cluster_a.size(); ++i) {
        ab_raw[i] = (static_cast<long long>(cluster_a[i]) << 32)
            ^ static_cast<long long>(static_cast<unsigned>(cluster_b[i]));
    }
    const auto codes_a = encode_first_occurrence(a_raw);
    const auto codes_b = encode_first_occurrence(b_raw);
    const auto codes_ab = encode_first_occurrence(ab_raw);
    const int ga = n_levels(codes_a);
    const int gb = n_levels(codes_b);
    const int gab = n_levels(codes_ab);
    if (ga < 2 || gb < 2) {
        throw InvalidInputError("cluster_cov_twoway: a clustering has a single group; "
                                "standard errors undefined");
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < k) throw RankDeficiencyError("cluster_cov_twoway: X is rank deficient");
    const Eigen::MatrixXd r_full = qr.matrixR()
        .topLeftCorner(k, k).template triangularView<Eigen::Upper>();
    const Eigen::MatrixXd r_inv = r_full.inverse();
    const auto perm = qr.colsPermutation();
    const Eigen::MatrixXd xtx_inv = perm * (r_inv * r_inv.transpose()) * perm.transpose();

    const Eigen::MatrixXd va =
        sandwich(xtx_inv, cluster_meat(X, residuals, codes_a, ga), ga, n, k);
    const Eigen::MatrixXd vb =
        sandwich(xtx_inv, cluster_meat(X, residuals, codes_b, gb), gb, n, k);
    const Eigen::MatrixXd vab =
        sandwich(xtx_inv, cluster_meat(X, residuals, codes_ab, gab), gab, n, k);

    // Evaluated as V_A + (V_B - V_AB) so identical partitions cancel exactly.
    Eigen::MatrixXd v = va + (vb - vab);
    v = ((v + v.transpose()) / 2.0).eval();

    bool fixed = false;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v);
    if (es.eigenvalues().minCoeff() < 0.0) {
        Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(0.0);
        v = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
        fixed = true;
    }
    if (repaired) *repaired = fixed;
    return v;
}

namespace {

struct DesignColumns {
    Eigen::VectorXd y;
    Eigen::MatrixXd X;
    std::vector<std::string> names;
};

double standardize_column(std::vector<double>& col, const std::string& name,
                          const std::string& sample, Moments* out) {
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= static_cast<double>(col.size());
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    const double sd = col.size() > 1
        ? std::sqrt(ss / static_cast<double>(col.size() - 1)) : 0.0;
    if (!(sd > 0.0)) {
        throw DegenerateSampleError("fit: variable '" + name
                                    + "' has zero variance in sample '" + sample + "'");
    }
    for (double& v : col) v = (v - mean) / sd;
    if (out) *out = {mean, sd};
    return sd;
}

}  // namespace

FitResult fit(const RegressionSpec& spec, const Panel& panel) {
    if (panel.rows.empty()) {
        throw InvalidInputError("fit '" + spec.name + "': empty panel");
    }
    if (spec.regressors.empty()) {
        throw InvalidInputError("fit '" + spec.name + "': no regressors");
    }

    // Canonical row order, so permuting the input changes no reported number.
    const std::size_t n_input = panel.rows.size();
    std::vector<const PanelRow*> rows;
    rows.reserve(n_input);
    for (const auto& r : panel.rows) rows.push_back(&r);
    std::sort(rows.begin(), rows.end(), [](const PanelRow* a, const PanelRow* b) {
        return std::tie(a->dest_cluster, a->res_cluster, a->amenity, a->period)
             < std::tie(b->dest_cluster, b->res_cluster, b->amenity, b->period);
    });

    // Iteratively drop rows that are singletons in any fixed-effect factor;
    // their demeaned values are identically zero and only deflate SEs.

    auto factor_key = [](const PanelRow& r, const std::string& f) -> std::string {
        if (f == "dest") return std::to_string(r.dest_cluster);
        if (f == "res") return std::to_string(r.res_cluster);
        if (f == "amenity") return r.amenity;
        if (f == "period") return r.period;
        throw ConfigError("unknown fixed-effect factor '" + f
                          + "' (valid: dest, res, amenity, period)");
    };

    bool changed = !spec.fixed_effects.empty();
    while (changed) {
        changed = false;
        for (const auto& f : spec.fixed_effects) {
            std::map<std::string, int> counts;
            for (const auto* r : rows) ++counts[factor_key(*r, f)];
            std::vector<const PanelRow*> kept;
            kept.reserve(rows.size());
            for (const auto* r : rows) {
                if (counts[factor_key(*r, f)] > 1) kept.push_back(r);
            }
            if (kept.size() != rows.size()) {
                rows.swap(kept);
                changed = true;
            }
        }
    }
    if (rows.size() < spec.regressors.size() + 1) {
        throw InvalidInputError("fit '" + spec.name + "': too few rows ("
                                + std::to_string(rows.size()) + ") after singleton drop");
    }
    const std::size_t n = rows.size();

    // Raw columns recomputed from the raw fields, then standardized on this
    // estimation sample (moments are per-sample by design).
    FitResult result;
    result.spec = spec;
    result.n_obs = n;
    result.n_dropped_singletons = n_input - n;
    result.standardization.sample_id = spec.name;
    result.standardization.log_mode = panel.standardization.log_mode;
    result.standardization.dist_offset_km = panel.standardization.dist_offset_km;

    std::vector<double> y_col(n), omega_col(n), logdist_col(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto& row = *rows[r];
        y_col[r] = panel.standardization.log_mode == "log1p"
            ? std::log1p(static_cast<double>(row.count))
            : std::log(static_cast<double>(row.count));
        omega_col[r] = row.omega;
        logdist_col[r] = std::log(row.distance_km
                                  + panel.standardization.dist_offset_km);
    }
    standardize_column(y_col, "y", spec.name, &result.standardization.y);
    standardize_column(omega_col, "omega", spec.name, &result.standardization.omega);

    const bool needs_dist =
        std::any_of(spec.regressors.begin(), spec.regressors.end(),
                    [](const std::string& s) {
                        return s == "log_dist" || s == "omega_x_logdist";
                    });
    if (needs_dist) {
        standardize_column(logdist_col, "log_dist", spec.name,
                           &result.standardization.log_dist);
    }

    DesignColumns design;
    design.y = Eigen::Map<Eigen::VectorXd>(y_col.data(), static_cast<Eigen::Index>(n));
    design.X.resize(static_cast<Eigen::Index>(n),
                    static_cast<Eigen::Index>(spec.regressors.size()));
    design.names = spec.regressors;
    for (std::size_t c = 0; c < spec.regressors.size(); ++c) {
        const std::string& reg = spec.regressors[c];
        for (std::size_t r = 0; r < n; ++r) {
            const auto& row = *rows[r];
            double v = 0.0;
            if (reg == "omega") v = omega_col[r];
            else if (reg == "log_dist") v = logdist_col[r];
            else if (reg == "omega_x_logdist") v = omega_col[r] * logdist_col[r];
            else if (reg == "omega_x_covid") v = omega_col[r] * row.covid;
            else if (reg == "omega_x_recovery") v = omega_col[r] * row.recovery;
            else throw ConfigError("unknown regressor '" + reg + "'");
            design.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
        }
    }

    // Integer-coded FE factors. With no fixed effects a single constant
    // group plays the role of the intercept.
    std::vector<std::vector<int>> factors;
    for (const auto& f : spec.fixed_effects) {
        std::map<std::string, int> code_of;
        std::vector<int> codes(n);
        for (std::size_t r = 0; r < n; ++r) {
            const auto key = factor_key(*rows[r], f);
            auto [it, inserted] = code_of.emplace(key, static_cast<int>(code_of.size()));
            codes[r] = it->second;
        }
        factors.push_back(std::move(codes));
    }
    if (factors.empty()) factors.emplace_back(n, 0);

    const double sst_total = design.y.squaredNorm();  // y standardized: mean 0

    Eigen::MatrixXd all(static_cast<Eigen::Index>(n),
                        design.X.cols() + 1);
    all.col(0) = design.y;
    all.rightCols(design.X.cols()) = design.X;
    result.demean_iterations =
        within_transform(all, factors, spec.tol, spec.max_iter);
    const Eigen::VectorXd y_within = all.col(0);
    const Eigen::MatrixXd x_within = all.rightCols(design.X.cols());

    const OlsResult fit_ols = ols(y_within, x_within, design.names);
    result.coef_names = design.names;
    result.beta = fit_ols.beta;

    std::vector<int> cl_a(n), cl_b(n);
    if (spec.cluster_dims.size() != 2) {
        throw ConfigError("fit: exactly two cluster dimensions required");
    }
    auto cluster_code = [&](const std::string& dim, const PanelRow& r) -> int {
        if (dim == "dest") return r.dest_cluster;
        if (dim == "res") return r.res_cluster;
        throw ConfigError("unknown cluster dimension '" + dim + "' (valid: dest, res)");
    };
    for (std::size_t r = 0; r < n; ++r) {
        cl_a[r] = cluster_code(spec.cluster_dims[0], *rows[r]);
        cl_b[r] = cluster_code(spec.cluster_dims[1], *rows[r]);
    }
    result.vcov = cluster_cov_twoway(x_within, fit_ols.residuals, cl_a, cl_b,
                                     &result.vcov_repaired);
    result.se = result.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
    result.stars.resize(design.names.size());
    for (Eigen::Index c = 0; c < result.beta.rows(); ++c) {
        const double se = result.se(c);
        result.stars[static_cast<std::size_t>(c)] =
            se > 0.0 ? stars_for(std::abs(result.beta(c)) / se) : "";
    }

    const double ssr = fit_ols.residuals.squaredNorm();
    const double sst_within = y_within.squaredNorm();
    result.r2 = sst_total > 0.0 ? 1.0 - ssr / sst_total : 0.0;
    result.within_r2 = sst_within > 0.0 ? 1.0 - ssr / sst_within : 0.0;
    return result;
}

MarginalCurve marginal_effects(const FitResult& fit, std::vector<double> distance_grid_km) {
    if (distance_grid_km.empty()) {
        distance_grid_km = {0.0, 1.0, 2.0, 5.0, 10.0, 20.0};
    }
    const auto find = [&](const std::string& name) -> Eigen::Index {
        for (std::size_t c = 0; c < fit.coef_names.size(); ++c) {
            if (fit.coef_names[c] == name) return static_cast<Eigen::Index>(c);
        }
        throw InvalidInputError("marginal_effects: fit '" + fit.spec.name
                                + "' has no '" + name + "' coefficient");
    };
    const Eigen::Index i_omega = find("omega");
    const Eigen::Index i_int = find("omega_x_logdist");
    const double b1 = fit.beta(i_omega);
    const double b3 = fit.beta(i_int);
    const double v11 = fit.vcov(i_omega, i_omega);
    const double v33 = fit.vcov(i_int, i_int);
    const double v13 = fit.vcov(i_omega, i_int);
    const auto& m = fit.standardization.log_dist;
    if (!(m.sd > 0.0)) {
        throw InvalidInputError("marginal_effects: fit has no log-distance standardization");
    }

    MarginalCurve curve;
    for (double d : distance_grid_km) {
        const double x = (std::log(d + fit.standardization.dist_offset_km) - m.mean) / m.sd;
        curve.distance_km.push_back(d);
        curve.log_dist_std.push_back(x);
        curve.effect.push_back(b1 + b3 * x);
        curve.se.push_back(std::sqrt(std::max(0.0, v11 + x * x * v33 + 2.0 * x * v13)));
    }
    return curve;
}

void write_marginal_csv(const MarginalCurve& curve, const std::filesystem::path& path) {
    csv::Writer w(path, {"distance_km", "log_dist_std", "effect", "se"});
    for (std::size_t i = 0; i < curve.distance_km.size(); ++i) {
        w.row({csv::format_double(curve.distance_km[i]),
               csv::format_double(curve.log_dist_std[i]),
               csv::format_double(curve.effect[i]),
               csv::format_double(curve.se[i])});
    }
}

void write_fit_json(const FitResult& fit, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["spec"] = fit.spec.name;
    j["regressors"] = fit.spec.regressors;
    j["fixed_effects"] = fit.spec.fixed_effects;
    j["cluster_dims"] = fit.spec.cluster_dims;
    auto& coefs = j["coefficients"] = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < fit.coef_names.size(); ++c) {
        coefs.push_back({{"name", fit.coef_names[c]},
                         {"estimate", fit.beta(static_cast<Eigen::Index>(c))},
                         {"se", fit.se(static_cast<Eigen::Index>(c))},
                         {"stars", fit.stars[c]}});
    }
    auto& vcov = j["vcov"] = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < fit.vcov.rows(); ++r) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (Eigen::Index c = 0; c < fit.vcov.cols(); ++c) row.push_back(fit.vcov(r, c));
        vcov.push_back(std::move(row));
    }
    j["n_obs"] = fit.n_obs;
    j["n_dropped_singletons"] = fit.n_dropped_singletons;
    j["r2"] = fit.r2;
    j["within_r2"] = fit.within_r2;
    j["demean_iterations"] = fit.demean_iterations;
    j["vcov_repaired"] = fit.vcov_repaired;
    j["standardization"] = {
        {"sample_id", fit.standardization.sample_id},
        {"log_mode", fit.standardization.log_mode},
        {"dist_offset_km", fit.standardization.dist_offset_km},
        {"y", {{"mean", fit.standardization.y.mean}, {"sd", fit.standardization.y.sd}}},
        {"omega", {{"mean", fit.standardization.omega.mean},
                   {"sd", fit.standardization.omega.sd}}},
        {"log_dist", {{"mean", fit.standardization.log_dist.mean},
                      {"sd", fit.standardization.log_dist.sd}}},
    };
    std::ofstream out(path);
    if (!out) throw InvalidInputError("cannot open output file: " + path.string());
    out << j.dump(2) << '\n';
}

std::string format_fit_table(const FitResult& fit) {
    std::ostringstream os;
    os << "Model: " << fit.spec.name << "\n";
    os << "Dependent variable: standardized "
       << (fit.standardization.log_mode == "log1p" ? "log(1+count)" : "log(count)") << "\n";
    os << std::string(52, '-') << "\n";
    os << std::left << std::setw(22) << "Variable"
       << std::right << std::setw(14) << "Estimate"
       << std::setw(16) << "Std. Error" << "\n";
    for (std::size_t c = 0; c < fit.coef_names.size(); ++c) {
        std::ostringstream est;
        est << std::fixed << std::setprecision(4)
            << fit.beta(static_cast<Eigen::Index>(c)) << fit.stars[c];
        std::ostringstream se;
        se << "(" << std::fixed << std::setprecision(4)
           << fit.se(static_cast<Eigen::Index>(c)) << ")";
        os << std::left << std::setw(22) << fit.coef_names[c]
           << std::right << std::setw(14) << est.str()
           << std::setw(16) << se.str() << "\n";
    }
    os << std::string(52, '-') << "\n";
    os << "Fixed effects: ";
    for (std::size_t f = 0; f < fit.spec.fixed_effects.size(); ++f) {
        if (f) os << ", ";
        os << fit.spec.fixed_effects[f];
    }
    if (fit.spec.fixed_effects.empty()) os << "none";
    os << "\n";
    os << "Observations: " << fit.n_obs;
    if (fit.n_dropped_singletons > 0) {
        os << " (dropped " << fit.n_dropped_singletons << " singleton rows)";
    }
    os << "\n";
    os << std::fixed << std::setprecision(5);
    os << "R2: " << fit.r2 << "\n";
    os << "Within R2: " << fit.within_r2 << "\n";
    os << "Clustered (" << fit.spec.cluster_dims[0] << " & " << fit.spec.cluster_dims[1]
       << ") standard-errors in parentheses\n";
    os << "Signif. Codes: ***: 0.01, **: 0.05, *: 0.1\n";
    return os.str();
}

}  // namespace conspace
