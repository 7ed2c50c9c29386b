#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "lsqgap/diagnostics.hpp"
#include "lsqgap/distributions.hpp"
#include "lsqgap/errors.hpp"
#include "lsqgap/estimators.hpp"
#include "lsqgap/parallel.hpp"

namespace lsqgap {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct BRule {
    enum class Kind { Fixed, SqrtDTimes };
    Kind kind = Kind::SqrtDTimes;
    double value = 1.0;

    double b_for(int d) const {
        return kind == Kind::Fixed ? value : value * std::sqrt(double(d));
    }
};

struct LambdaRule {
    enum class Kind { Fixed, RSquaredTimes, LambdaStar };
    Kind kind = Kind::RSquaredTimes;
    double value = 1.0;

    double lambda_for(const DistributionSpec& spec, double b) const {
        switch (kind) {
            case Kind::Fixed: return value;
            case Kind::RSquaredTimes: return value * spec.r() * spec.r();
            case Kind::LambdaStar: return lambda_star(spec.dim(), spec.m(), b);
        }
        return value;
    }
};

// A distribution family instantiated per grid dimension d.
struct DistributionRule {
    enum class Kind { SparseDenseMixture, CouponCollector, Gaussian };
    Kind kind = Kind::SparseDenseMixture;
    double sparse_exponent = 0.5;  // mixture
    int k = 0;                     // coupon collector; 0 means k = d
    double scale = 1.0;            // coupon collector
    double noise_sd = 1.0;         // gaussian (identity covariance, w_true = 0)

    DistributionSpec instantiate(int d) const {
        switch (kind) {
            case Kind::SparseDenseMixture:
                return DistributionSpec::sparse_dense_mixture(d, sparse_exponent);
            case Kind::CouponCollector:
                return DistributionSpec::coupon_collector(d, k > 0 ? k : d, scale);
            case Kind::Gaussian:
                return DistributionSpec::gaussian(SymMatrix::Identity(d), Eigen::VectorXd::Zero(d), noise_sd);
        }
        throw std::logic_error("unreachable distribution kind");
    }
};

struct ExperimentConfig {
    DistributionRule distribution;
    std::vector<std::pair<int, int>> grid;  // (d, n)
    std::vector<EstimatorDescriptor::Kind> estimators;
    int replicates = 2;
    std::uint64_t seed = 1;
    BRule b_rule;
    LambdaRule lambda_rule;
};

inline void validate_config(const ExperimentConfig& cfg) {
    if (cfg.grid.empty()) throw ConfigError("grid", "must not be empty");
    if (cfg.estimators.empty()) throw ConfigError("estimators", "must not be empty");
    if (cfg.replicates < 2) throw ConfigError("replicates", "must be >= 2 so the stderr is defined");
    for (std::size_t i = 0; i < cfg.grid.size(); ++i) {
        const auto [d, n] = cfg.grid[i];
        const std::string path = "grid[" + std::to_string(i) + "]";
        if (n < 1) throw ConfigError(path + ".n", "must be >= 1");
        try {
            const DistributionSpec spec = cfg.distribution.instantiate(d);
            if (!spec.bounded() && cfg.lambda_rule.kind != LambdaRule::Kind::Fixed) {
                throw ConfigError("lambda_rule", "unbounded distribution needs a fixed lambda");
            }
        } catch (const InvalidSpec& e) {
            throw ConfigError(path + ".d", e.what());
        }
    }
    if (cfg.b_rule.value <= 0.0) throw ConfigError("b_rule", "scale must be positive");
}

inline nlohmann::json spec_to_json(const DistributionSpec& spec) {
    nlohmann::json j;
    j["kind"] = spec.tag();
    j["d"] = spec.dim();
    if (const auto* mix = std::get_if<SparseDenseMixture>(&spec.variant())) {
        j["sparse_exponent"] = mix->sparse_exponent;
    } else if (const auto* cc = std::get_if<CouponCollector>(&spec.variant())) {
        j["k"] = cc->k;
        j["scale"] = cc->scale;
    } else if (const auto* g = std::get_if<WellSpecifiedGaussian>(&spec.variant())) {
        j["noise_sd"] = g->noise_sd;
        j["w_true"] = std::vector<double>(g->w_true.data(), g->w_true.data() + g->w_true.size());
        std::vector<std::vector<double>> sig(static_cast<std::size_t>(g->d));
        for (int r = 0; r < g->d; ++r) {
            sig[static_cast<std::size_t>(r)].assign(g->d, 0.0);
            for (int c = 0; c < g->d; ++c) sig[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = g->sigma(r, c);
        }
        j["sigma"] = sig;
    } else {
        const auto& fd = std::get<FiniteDiscrete>(spec.variant());
        nlohmann::json atoms = nlohmann::json::array();
        for (const auto& a : fd.atoms) {
            atoms.push_back({{"x", std::vector<double>(a.x.data(), a.x.data() + a.x.size())},
                             {"y", a.y},
                             {"p", a.p}});
        }
        j["atoms"] = atoms;
    }
    return j;
}

inline DistributionSpec spec_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "sparse_dense_mixture") {
        return DistributionSpec::sparse_dense_mixture(j.at("d").get<int>(), j.value("sparse_exponent", 0.5));
    }
    if (kind == "coupon_collector") {
        const int d = j.at("d").get<int>();
        return DistributionSpec::coupon_collector(d, j.value("k", d), j.value("scale", 1.0));
    }
    if (kind == "gaussian") {
        const int d = j.at("d").get<int>();
        Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
        if (j.contains("w_true")) {
            const auto v = j.at("w_true").get<std::vector<double>>();
            if (static_cast<int>(v.size()) != d) throw ConfigError("w_true", "dimension mismatch");
            w = Eigen::Map<const Eigen::VectorXd>(v.data(), d);
        }
        Eigen::MatrixXd sig = Eigen::MatrixXd::Identity(d, d);
        if (j.contains("sigma") && j.at("sigma").is_array()) {
            const auto rowsj = j.at("sigma").get<std::vector<std::vector<double>>>();
            if (static_cast<int>(rowsj.size()) != d) throw ConfigError("sigma", "dimension mismatch");
            for (int r = 0; r < d; ++r) {
                if (static_cast<int>(rowsj[static_cast<std::size_t>(r)].size()) != d) {
                    throw ConfigError("sigma", "dimension mismatch");
                }
                for (int c = 0; c < d; ++c) sig(r, c) = rowsj[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
            }
        }
        return DistributionSpec::gaussian(SymMatrix(std::move(sig)), std::move(w), j.value("noise_sd", 1.0));
    }
    if (kind == "finite_discrete") {
        std::vector<FiniteAtom> atoms;
        for (const auto& a : j.at("atoms")) {
            FiniteAtom atom;
            const auto xs = a.at("x").get<std::vector<double>>();
            atom.x = Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
            atom.y = a.at("y").get<double>();
            atom.p = a.at("p").get<double>();
            atoms.push_back(std::move(atom));
        }
        return DistributionSpec::finite_discrete(std::move(atoms));
    }
    throw ConfigError("kind", "unknown distribution kind '" + kind + "'");
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    if (!j.contains("distribution")) throw ConfigError("distribution", "missing");
    const auto& dj = j.at("distribution");
    const std::string kind = dj.value("kind", "");
    if (kind == "sparse_dense_mixture") {
        cfg.distribution.kind = DistributionRule::Kind::SparseDenseMixture;
        cfg.distribution.sparse_exponent = dj.value("sparse_exponent", 0.5);
    } else if (kind == "coupon_collector") {
        cfg.distribution.kind = DistributionRule::Kind::CouponCollector;
        cfg.distribution.k = dj.value("k", 0);
        cfg.distribution.scale = dj.value("scale", 1.0);
    } else if (kind == "gaussian") {
        cfg.distribution.kind = DistributionRule::Kind::Gaussian;
        cfg.distribution.noise_sd = dj.value("noise_sd", 1.0);
    } else {
        throw ConfigError("distribution.kind", "unknown kind '" + kind + "'");
    }
    if (!j.contains("grid")) throw ConfigError("grid", "missing");
    for (std::size_t i = 0; i < j.at("grid").size(); ++i) {
        const auto& g = j.at("grid")[i];
        if (!g.is_array() || g.size() != 2) {
            throw ConfigError("grid[" + std::to_string(i) + "]", "expected [d, n]");
        }
        cfg.grid.emplace_back(g[0].get<int>(), g[1].get<int>());
    }
    if (!j.contains("estimators")) throw ConfigError("estimators", "missing");
    for (const auto& e : j.at("estimators")) {
        cfg.estimators.push_back(EstimatorDescriptor::from_tag(e.get<std::string>()).kind);
    }
    cfg.replicates = j.value("replicates", 2);
    cfg.seed = j.value("seed", std::uint64_t{1});
    if (j.contains("b_rule")) {
        const auto& b = j.at("b_rule");
        const std::string bk = b.value("kind", "");
        if (bk == "fixed") {
            cfg.b_rule = {BRule::Kind::Fixed, b.value("b", 1.0)};
        } else if (bk == "sqrt_d_times") {
            cfg.b_rule = {BRule::Kind::SqrtDTimes, b.value("c", 1.0)};
        } else {
            throw ConfigError("b_rule.kind", "expected 'fixed' or 'sqrt_d_times'");
        }
    }
    if (j.contains("lambda_rule")) {
        const auto& l = j.at("lambda_rule");
        const std::string lk = l.value("kind", "");
        if (lk == "fixed") {
            cfg.lambda_rule = {LambdaRule::Kind::Fixed, l.value("lambda", 1.0)};
        } else if (lk == "r_squared_times") {
            cfg.lambda_rule = {LambdaRule::Kind::RSquaredTimes, l.value("c", 1.0)};
        } else if (lk == "lambda_star") {
            cfg.lambda_rule = {LambdaRule::Kind::LambdaStar, 1.0};
        } else {
            throw ConfigError("lambda_rule.kind", "expected 'fixed', 'r_squared_times' or 'lambda_star'");
        }
    }
    validate_config(cfg);
    return cfg;
}

// ---------------------------------------------------------------------------
// Result rows
// ---------------------------------------------------------------------------

struct ResultRow {
    std::string distribution_tag;
    int d = 0;
    int n = 0;
    double b = 0.0;
    double lambda = 0.0;
    std::string estimator;
    int replicates = 0;
    std::uint64_t seed = 0;
    double excess_mean = 0.0;
    double excess_stderr = 0.0;
    double multiplier_term = 0.0;
    double shamir_fast = 0.0;
    double localized_upper = 0.0;
    double d32_curve = 0.0;
    double wall_ms = 0.0;
};

inline constexpr const char* kResultHeader =
    "distribution_tag,d,n,b,lambda,estimator,replicates,seed,excess_mean,excess_stderr,"
    "multiplier_term,shamir_fast,localized_upper,d32_curve,wall_ms";

// One row per (grid point x estimator), emitted in grid order no matter how
// replicates are scheduled. Replicates are shared across estimators at a grid
// point: estimator e on replicate rep sees exactly the dataset
// sample(spec, n, replicate_seed(seed, rep)).
inline std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, int threads = -1) {
    validate_config(cfg);
    std::vector<ResultRow> rows;
    const int R = cfg.replicates;
    const int E = static_cast<int>(cfg.estimators.size());
    for (const auto& [d, n] : cfg.grid) {
        const DistributionSpec spec = cfg.distribution.instantiate(d);
        const double b = cfg.b_rule.b_for(d);
        const double lambda = cfg.lambda_rule.lambda_for(spec, b);
        const PopulationMoments mom = population_moments(spec);
        const auto [wstar, opt_risk] = optimal_weights(spec, b);
        const double shift = std::isfinite(spec.r()) ? lambda * spec.r() * spec.r() : lambda;

        std::vector<EstimatorDescriptor> descs;
        for (auto kind : cfg.estimators) {
            EstimatorDescriptor desc;
            desc.kind = kind;
            desc.b = b;
            desc.lambda = lambda;
            descs.push_back(desc);
        }
        std::vector<std::vector<double>> excess(static_cast<std::size_t>(E),
                                                std::vector<double>(static_cast<std::size_t>(R)));
        std::vector<std::vector<double>> wall(static_cast<std::size_t>(E),
                                              std::vector<double>(static_cast<std::size_t>(R)));
        std::vector<double> mult(static_cast<std::size_t>(R));

        detail::parallel_for(R, [&](int rep) {
            const Dataset data = sample(spec, n, replicate_seed(cfg.seed, static_cast<std::uint64_t>(rep)));
            {
                const detail::SymEig eig(data.covariates.transpose() * data.covariates);
                Eigen::VectorXd w(d);
                for (int i = 0; i < d; ++i) w[i] = 1.0 / (eig.eigenvalues()[i] + shift);
                const Eigen::MatrixXd B = data.covariates * eig.eigenvectors();
                const Eigen::VectorXd lev =
                    (B.array().square().rowwise() * w.transpose().array()).rowwise().sum();
                const Eigen::VectorXd xi = data.responses - data.covariates * wstar;
                CompensatedSum acc;
                for (int i = 0; i < n; ++i) acc.add(xi[i] * xi[i] * lev[i]);
                mult[static_cast<std::size_t>(rep)] = acc.value();
            }
            for (int e = 0; e < E; ++e) {
                const auto t0 = std::chrono::steady_clock::now();
                excess[static_cast<std::size_t>(e)][static_cast<std::size_t>(rep)] =
                    detail::fit_and_exact_risk(spec, mom, descs[static_cast<std::size_t>(e)], data) - opt_risk;
                const auto t1 = std::chrono::steady_clock::now();
                wall[static_cast<std::size_t>(e)][static_cast<std::size_t>(rep)] =
                    std::chrono::duration<double, std::milli>(t1 - t0).count();
            }
        }, threads);

        CompensatedSum mult_sum;
        for (double v : mult) mult_sum.add(v);
        const BoundOverlay overlay = bound_overlay(d, n, spec.m(), spec.r(), b);
        for (int e = 0; e < E; ++e) {
            const ExcessRiskEstimate est = detail::aggregate_excess(excess[static_cast<std::size_t>(e)]);
            ResultRow row;
            row.distribution_tag = spec.tag();
            row.d = d;
            row.n = n;
            row.b = b;
            row.lambda = lambda;
            row.estimator = descs[static_cast<std::size_t>(e)].tag();
            row.replicates = R;
            row.seed = cfg.seed;
            row.excess_mean = est.mean;
            row.excess_stderr = est.stderr_;
            row.multiplier_term = mult_sum.value() / R;
            row.shamir_fast = overlay.shamir_fast;
            row.localized_upper = overlay.localized_upper;
            row.d32_curve = overlay.d32_curve;
            CompensatedSum wsum;
            for (double v : wall[static_cast<std::size_t>(e)]) wsum.add(v);
            row.wall_ms = wsum.value();
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Scaling-exponent fit
// ---------------------------------------------------------------------------

struct ScalingFit {
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0;  // rms of log-space fit residuals
    int rows_used = 0;
};

// Least squares of log(excess_mean * n) against log(d). Rows with
// nonpositive excess_mean are excluded with a warning.
inline ScalingFit fit_scaling_exponent(const std::vector<ResultRow>& rows, const std::string& estimator,
                                       std::ostream* warn = &std::cerr) {
    std::vector<double> xs, ys;
    for (const auto& row : rows) {
        if (row.estimator != estimator) continue;
        if (!(row.excess_mean > 0.0)) {
            if (warn != nullptr) {
                *warn << "fit_scaling_exponent: excluding d=" << row.d << " n=" << row.n
                      << " (nonpositive excess_mean " << row.excess_mean << ")\n";
            }
            continue;
        }
        xs.push_back(std::log(double(row.d)));
        ys.push_back(std::log(row.excess_mean * row.n));
    }
    if (xs.size() < 3) {
        throw InsufficientData("fit_scaling_exponent: need >= 3 rows with positive excess_mean, have " +
                               std::to_string(xs.size()));
    }
    const int k = static_cast<int>(xs.size());
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < k; ++i) { mx += xs[static_cast<std::size_t>(i)]; my += ys[static_cast<std::size_t>(i)]; }
    mx /= k;
    my /= k;
    double sxx = 0.0, sxy = 0.0;
    for (int i = 0; i < k; ++i) {
        sxx += (xs[static_cast<std::size_t>(i)] - mx) * (xs[static_cast<std::size_t>(i)] - mx);
        sxy += (xs[static_cast<std::size_t>(i)] - mx) * (ys[static_cast<std::size_t>(i)] - my);
    }
    if (sxx == 0.0) throw InsufficientData("fit_scaling_exponent: rows share a single d");
    ScalingFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ssr = 0.0;
    for (int i = 0; i < k; ++i) {
        const double r = ys[static_cast<std::size_t>(i)] - (fit.intercept + fit.slope * xs[static_cast<std::size_t>(i)]);
        ssr += r * r;
    }
    fit.residual = std::sqrt(ssr / k);
    fit.rows_used = k;
    return fit;
}

// ---------------------------------------------------------------------------
// Identity suite
// ---------------------------------------------------------------------------

struct IdentityCheck {
    std::string name;
    double max_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

struct IdentityReport {
    std::vector<IdentityCheck> checks;

    bool all_passed() const {
        for (const auto& c : checks) {
            if (!c.passed) return false;
        }
        return true;
    }
};

namespace detail {

inline Dataset random_bounded_dataset(Rng& rng, int n, int d) {
    Dataset out;
    out.covariates.resize(n, d);
    out.responses.resize(n);
    out.r = 1.0;
    out.m = 1.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            out.covariates(i, j) = (2.0 * rng.next_double() - 1.0) / std::sqrt(double(d));
        }
        out.responses[i] = 2.0 * rng.next_double() - 1.0;
    }
    return out;
}

}  // namespace detail

// Exact-identity suite: population optimum closed form, min-norm LS closed
// form on the mixture, ridge leave-one-out equality, Forster-Warmuth
// leave-one-out identity, Sherman-Morrison downdate, constrained-LS KKT, and
// the counts-vector identities. perturb > 0 is a self-test knob that breaks
// the min-norm closed form on purpose.
inline IdentityReport verify_identities(std::uint64_t seed, double perturb = 0.0) {
    IdentityReport report;
    const auto push = [&](const std::string& name, double err, double tol) {
        report.checks.push_back({name, err, tol, err <= tol});
    };

    {  // population optimum on the mixture: ((sqrt(d)-1)/(2 sqrt(d)-1)) * ones
        double err = 0.0;
        for (int d : {4, 16, 36}) {
            const auto spec = DistributionSpec::sparse_dense_mixture(d);
            const auto [w, risk] = optimal_weights(spec, std::sqrt(double(d)));
            const double target = (std::sqrt(double(d)) - 1.0) / (2.0 * std::sqrt(double(d)) - 1.0);
            err = std::max(err, (w.array() - target).abs().maxCoeff());
        }
        push("omega_star_closed_form", err, 1e-8);
    }

    {  // min-norm LS closed form and its norm bound, on A-invertible samples
        const int d = 16, n = 3000;
        const auto spec = DistributionSpec::sparse_dense_mixture(d);
        double err = 0.0, bound_err = 0.0;
        int accepted = 0;
        for (std::uint64_t t = 0; accepted < 20 && t < 200; ++t) {
            const Dataset data = sample(spec, n, replicate_seed(seed, 0x100 + t));
            const ConstructionStats st = construction_stats(data);
            if (!st.a_invertible) continue;
            ++accepted;
            Eigen::VectorXd w = min_norm_solve(data.covariates, data.responses);
            if (perturb != 0.0) w[0] += perturb;
            const int ni = st.sparse_count;
            const detail::SymEig a_eig(st.a_matrix.mat());
            const Eigen::VectorXd a_zeta = a_eig.shifted_solve(st.zeta, 0.0);
            const double coef = std::pow(double(d), 1.5) / ni /
                                (double(d) * d / (n - ni) + st.q_form_1A1);
            const Eigen::VectorXd closed = coef * (Eigen::VectorXd::Ones(d) - a_zeta);
            err = std::max(err, (w - closed).norm() / closed.norm());
            const double bound = double(n) * n / (double(d) * d) * st.q_form_1A21;
            bound_err = std::max(bound_err, (w.squaredNorm() - bound) / bound);
        }
        push("min_norm_closed_form", err, 1e-6);
        push("min_norm_norm_bound", std::max(0.0, bound_err), 1e-10);
    }

    {  // ridge leave-one-out equality on random bounded data
        Rng rng(seed, 0x4C4F4FULL);
        double err = 0.0;
        for (int t = 0; t < 50; ++t) {
            const int n = 5 + static_cast<int>(rng.next_below(21));
            const int d = 2 + static_cast<int>(rng.next_below(5));
            const double lambda = (t % 3 == 0) ? 0.3 : (t % 3 == 1 ? 1.0 : 3.0);
            const Dataset data = detail::random_bounded_dataset(rng, n, d);
            for (int i = 0; i < n; ++i) {
                const auto [direct, shortcut] = ridge_loo_residual(data, lambda, i);
                err = std::max(err, std::abs(direct - shortcut) / std::max(1.0, std::abs(direct)));
            }
        }
        push("ridge_loo_equality", err, 1e-8);
    }

    {  // Forster-Warmuth leave-one-out identity
        Rng rng(seed, 0x46574C4FULL);
        double err = 0.0;
        for (int t = 0; t < 50; ++t) {
            const int n = 4 + static_cast<int>(rng.next_below(16));
            const int d = 2 + static_cast<int>(rng.next_below(5));
            const Dataset data = detail::random_bounded_dataset(rng, n, d);
            const detail::SymEig full(data.covariates.transpose() * data.covariates);
            const Eigen::VectorXd w_inf = full.pinv_solve(data.covariates.transpose() * data.responses);
            for (int j = 0; j < n; ++j) {
                const Eigen::VectorXd xj = data.covariates.row(j).transpose();
                const double hj = full.pinv_quadform(xj);
                const double rhs = (1.0 - hj) * (w_inf.dot(xj) - hj * data.responses[j]);
                const double lhs = fw_predict(data.without_row(j), xj);
                err = std::max(err, std::abs(lhs - rhs));
            }
        }
        push("fw_loo_identity", err, 1e-8);
    }

    {  // Sherman-Morrison downdate against direct inversion
        Rng rng(seed, 0x534DULL);
        double err = 0.0;
        for (int t = 0; t < 50; ++t) {
            const int d = 2 + static_cast<int>(rng.next_below(7));
            Eigen::MatrixXd r(d, d);
            for (int i = 0; i < d; ++i) {
                for (int j = 0; j < d; ++j) r(i, j) = rng.next_gaussian();
            }
            const SymMatrix m(r * r.transpose() + 0.5 * Eigen::MatrixXd::Identity(d, d));
            const detail::SymEig eig(m.mat());
            const SymMatrix inv(eig.pinv());
            Eigen::VectorXd x(d);
            for (int i = 0; i < d; ++i) x[i] = rng.next_gaussian();
            const double h = x.dot(inv.mat() * x);
            if (h > 0.8) x *= std::sqrt(0.8 / h);
            const SymMatrix down = sherman_morrison_downdate(inv, x);
            const Eigen::MatrixXd direct = detail::SymEig(m.mat() - x * x.transpose()).pinv();
            err = std::max(err, (down.mat() - direct).cwiseAbs().maxCoeff());
        }
        push("sherman_morrison_downdate", err, 1e-8);
    }

    {  // constrained LS: KKT residual and boundary norm with an active constraint
        Rng rng(seed, 0x4B4B54ULL);
        double err = 0.0;
        for (int t = 0; t < 30; ++t) {
            const int n = 10 + static_cast<int>(rng.next_below(20));
            const int d = 2 + static_cast<int>(rng.next_below(6));
            const Dataset data = detail::random_bounded_dataset(rng, n, d);
            const Eigen::VectorXd w0 = min_norm_solve(data.covariates, data.responses);
            if (w0.norm() == 0.0) continue;
            const double b = 0.5 * w0.norm();
            const LinearPredictor fit = fit_constrained_ls(data, b);
            const Eigen::VectorXd xty = data.covariates.transpose() * data.responses;
            const Eigen::VectorXd kkt = data.covariates.transpose() * (data.covariates * fit.weights) +
                                        fit.meta.multiplier * fit.weights - xty;
            err = std::max(err, kkt.norm() / xty.norm());
            err = std::max(err, std::abs(fit.weights.norm() - b) / b);
        }
        push("constrained_ls_kkt", err, 1e-8);
    }

    {  // counts-vector identities A 1 = v, <zeta, 1> = 0
        double err = 0.0;
        for (int d : {16, 25}) {
            const auto spec = DistributionSpec::sparse_dense_mixture(d);
            const Dataset data = sample(spec, 2000, replicate_seed(seed, 0x200 + d));
            const ConstructionStats st = construction_stats(data);
            err = std::max(err, (st.a_matrix.mat() * Eigen::VectorXd::Ones(d) - st.counts).cwiseAbs().maxCoeff());
            err = std::max(err, std::abs(st.zeta.sum()));
        }
        push("construction_identities", err, 1e-10);
    }

    return report;
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

enum class EmitFormat { Csv, Json };

namespace detail {

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline nlohmann::json json_double(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

inline double double_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        return std::numeric_limits<double>::quiet_NaN();
    }
    return j.get<double>();
}

}  // namespace detail

inline std::string rows_to_csv(const std::vector<ResultRow>& rows) {
    std::ostringstream out;
    out << kResultHeader << "\n";
    for (const auto& r : rows) {
        out << r.distribution_tag << ',' << r.d << ',' << r.n << ',' << detail::fmt17(r.b) << ','
            << detail::fmt17(r.lambda) << ',' << r.estimator << ',' << r.replicates << ',' << r.seed << ','
            << detail::fmt17(r.excess_mean) << ',' << detail::fmt17(r.excess_stderr) << ','
            << detail::fmt17(r.multiplier_term) << ',' << detail::fmt17(r.shamir_fast) << ','
            << detail::fmt17(r.localized_upper) << ',' << detail::fmt17(r.d32_curve) << ','
            << detail::fmt17(r.wall_ms) << "\n";
    }
    return out.str();
}

inline nlohmann::json rows_to_json(const std::vector<ResultRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
        arr.push_back({{"distribution_tag", r.distribution_tag},
                       {"d", r.d},
                       {"n", r.n},
                       {"b", detail::json_double(r.b)},
                       {"lambda", detail::json_double(r.lambda)},
                       {"estimator", r.estimator},
                       {"replicates", r.replicates},
                       {"seed", r.seed},
                       {"excess_mean", detail::json_double(r.excess_mean)},
                       {"excess_stderr", detail::json_double(r.excess_stderr)},
                       {"multiplier_term", detail::json_double(r.multiplier_term)},
                       {"shamir_fast", detail::json_double(r.shamir_fast)},
                       {"localized_upper", detail::json_double(r.localized_upper)},
                       {"d32_curve", detail::json_double(r.d32_curve)},
                       {"wall_ms", detail::json_double(r.wall_ms)}});
    }
    return arr;
}

inline std::vector<ResultRow> rows_from_json(const nlohmann::json& arr) {
    std::vector<ResultRow> rows;
    for (const auto& j : arr) {
        ResultRow r;
        r.distribution_tag = j.at("distribution_tag").get<std::string>();
        r.d = j.at("d").get<int>();
        r.n = j.at("n").get<int>();
        r.b = detail::double_from_json(j.at("b"));
        r.lambda = detail::double_from_json(j.at("lambda"));
        r.estimator = j.at("estimator").get<std::string>();
        r.replicates = j.at("replicates").get<int>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.excess_mean = detail::double_from_json(j.at("excess_mean"));
        r.excess_stderr = detail::double_from_json(j.at("excess_stderr"));
        r.multiplier_term = detail::double_from_json(j.at("multiplier_term"));
        r.shamir_fast = detail::double_from_json(j.at("shamir_fast"));
        r.localized_upper = detail::double_from_json(j.at("localized_upper"));
        r.d32_curve = detail::double_from_json(j.at("d32_curve"));
        r.wall_ms = detail::double_from_json(j.at("wall_ms"));
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<ResultRow> rows_from_csv(std::istream& in) {
    std::vector<ResultRow> rows;
    std::string line;
    if (!std::getline(in, line)) throw IoError("rows_from_csv: empty input");
    if (line != kResultHeader) throw IoError("rows_from_csv: unexpected header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 15) throw IoError("rows_from_csv: expected 15 fields, got " + std::to_string(f.size()));
        ResultRow r;
        r.distribution_tag = f[0];
        r.d = std::stoi(f[1]);
        r.n = std::stoi(f[2]);
        r.b = std::strtod(f[3].c_str(), nullptr);
        r.lambda = std::strtod(f[4].c_str(), nullptr);
        r.estimator = f[5];
        r.replicates = std::stoi(f[6]);
        r.seed = std::stoull(f[7]);
        r.excess_mean = std::strtod(f[8].c_str(), nullptr);
        r.excess_stderr = std::strtod(f[9].c_str(), nullptr);
        r.multiplier_term = std::strtod(f[10].c_str(), nullptr);
        r.shamir_fast = std::strtod(f[11].c_str(), nullptr);
        r.localized_upper = std::strtod(f[12].c_str(), nullptr);
        r.d32_curve = std::strtod(f[13].c_str(), nullptr);
        r.wall_ms = std::strtod(f[14].c_str(), nullptr);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void emit(const std::vector<ResultRow>& rows, EmitFormat format, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("emit: cannot open '" + path + "' for writing");
    if (format == EmitFormat::Csv) {
        out << rows_to_csv(rows);
    } else {
        out << rows_to_json(rows).dump(2) << "\n";
    }
    if (!out.good()) throw IoError("emit: write to '" + path + "' failed");
}

// Serialized predictors for result auditing.
inline nlohmann::json predictor_to_json(const LinearPredictor& p) {
    return {{"kind", "linear"},
            {"weights", std::vector<double>(p.weights.data(), p.weights.data() + p.weights.size())},
            {"constraint_active", p.meta.constraint_active},
            {"multiplier", p.meta.multiplier}};
}

inline nlohmann::json predictor_to_json(const EstimatorDescriptor& desc, const Dataset& train) {
    return {{"kind", desc.tag()},
            {"lambda", detail::json_double(desc.lambda)},
            {"b", detail::json_double(desc.b)},
            {"train_n", train.n()},
            {"train_d", train.dim()}};
}

}  // namespace lsqgap
