#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lsqgap/distributions.hpp"
#include "lsqgap/errors.hpp"
#include "lsqgap/estimators.hpp"
#include "lsqgap/parallel.hpp"
#include "lsqgap/rng.hpp"

namespace lsqgap {

struct EstimatorDescriptor {
    enum class Kind { ConstrainedLs, Ridge, MinNorm, VawBatch, ForsterWarmuth, AdversarialErm };

    Kind kind = Kind::MinNorm;
    double b = std::numeric_limits<double>::infinity();
    double lambda = 0.0;

    static EstimatorDescriptor constrained_ls(double b) { return {Kind::ConstrainedLs, b, 0.0}; }
    static EstimatorDescriptor ridge(double lambda) { return {Kind::Ridge, std::numeric_limits<double>::infinity(), lambda}; }
    static EstimatorDescriptor min_norm() { return {}; }
    static EstimatorDescriptor vaw_batch(double lambda) { return {Kind::VawBatch, std::numeric_limits<double>::infinity(), lambda}; }
    static EstimatorDescriptor forster_warmuth() { return {Kind::ForsterWarmuth, std::numeric_limits<double>::infinity(), 0.0}; }
    static EstimatorDescriptor adversarial_erm(double b) { return {Kind::AdversarialErm, b, 0.0}; }

    bool needs_b() const { return kind == Kind::ConstrainedLs || kind == Kind::AdversarialErm; }
    bool needs_lambda() const { return kind == Kind::Ridge || kind == Kind::VawBatch; }
    bool linear() const {
        return kind == Kind::ConstrainedLs || kind == Kind::Ridge || kind == Kind::MinNorm ||
               kind == Kind::AdversarialErm;
    }

    std::string tag() const {
        switch (kind) {
            case Kind::ConstrainedLs: return "constrained_ls";
            case Kind::Ridge: return "ridge";
            case Kind::MinNorm: return "min_norm";
            case Kind::VawBatch: return "vaw_batch";
            case Kind::ForsterWarmuth: return "forster_warmuth";
            case Kind::AdversarialErm: return "adversarial_erm";
        }
        return "unknown";
    }

    static EstimatorDescriptor from_tag(const std::string& tag) {
        if (tag == "constrained_ls") return {Kind::ConstrainedLs};
        if (tag == "ridge") return {Kind::Ridge};
        if (tag == "min_norm") return {Kind::MinNorm};
        if (tag == "vaw_batch") return {Kind::VawBatch};
        if (tag == "forster_warmuth") return {Kind::ForsterWarmuth};
        if (tag == "adversarial_erm") return {Kind::AdversarialErm};
        throw ConfigError("estimators", "unknown estimator tag '" + tag + "'");
    }
};

struct ExcessRiskEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;  // sample sd / sqrt(replicates)
    int replicates = 0;
    std::vector<double> per_replicate;
};

struct BoundOverlay {
    double shamir_fast = 0.0;
    double slow_rate = 0.0;
    double localized_upper = 0.0;
    double d32_curve = 0.0;
};

struct DiagnosticsReport {
    double multiplier_term = 0.0;
    double effective_dimension = 0.0;
    double noise_l4_l2 = 0.0;
    double design_l4_l2 = 0.0;
    double leverage_max = 0.0;
    BoundOverlay bound_overlay;
};

struct ConstructionStats {
    int sparse_count = 0;           // |I|
    Eigen::VectorXd counts;         // v: per-coordinate hit counts over sparse draws
    Eigen::VectorXd zeta;           // v - |I| (s/d) 1
    SymMatrix a_matrix = SymMatrix::Zero(1);
    bool a_invertible = false;
    double lambda_min_a = 0.0;
    double q_form_1A1 = std::numeric_limits<double>::quiet_NaN();
    double q_form_1A21 = std::numeric_limits<double>::quiet_NaN();
    double q_form_zAz = std::numeric_limits<double>::quiet_NaN();
};

// ---------------------------------------------------------------------------
// Exact risk of pointwise (possibly non-linear) predictors. Only finitely
// supported distributions qualify; the sparse-mixture expectation runs over
// the dense atom plus every one of the (d choose s) supports.
// ---------------------------------------------------------------------------

namespace detail {

template <class PointFn>
double mixture_exact_risk(const SparseDenseMixture& mix, PointFn&& f) {
    const int d = mix.d;
    const int s = mix.support_size();
    const double p = mix.sparse_prob();
    const double scale = mix.atom_scale();
    const Eigen::VectorXd dense = Eigen::VectorXd::Constant(d, 1.0 / d);
    const double fd = f(dense);
    CompensatedSum sq;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
    for_each_subset(d, s, [&](const std::vector<int>& idx) {
        x.setZero();
        for (int i : idx) x[i] = scale;
        const double v = f(x);
        sq.add(v * v);
    });
    const double sparse_ms = sq.value() / binomial_count(d, s);
    return (1.0 - p) * (1.0 - fd) * (1.0 - fd) + p * sparse_ms;
}

// Mean of f(x_S)^2 over all supports for the Forster-Warmuth closed form
//   f(x) = (x^T u) / (1 + x^T M x)^2,  u = G^{-1} t, M = G^{-1},
// by depth-first enumeration with incremental linear and quadratic forms.
class FwSupportSweep {
public:
    FwSupportSweep(const Eigen::MatrixXd& M, const Eigen::VectorXd& u, double scale)
        : m_(M), u_(u), scale_(scale), scale2_(scale * scale),
          d_(static_cast<int>(u.size())), acc_(u.size(), 0.0) {}

    double mean_square(int k) {
        total_ = CompensatedSum();
        descend(0, k, 0.0, 0.0);
        return total_.value() / binomial_count(d_, k);
    }

private:
    void descend(int start, int remaining, double sum_u, double sum_m) {
        if (remaining == 0) {
            const double q = scale_ * sum_u;
            const double g = 1.0 + scale2_ * sum_m;
            const double f = q / (g * g);
            total_.add(f * f);
            return;
        }
        for (int t = start; t <= d_ - remaining; ++t) {
            const double new_m = sum_m + m_(t, t) + 2.0 * acc_[static_cast<std::size_t>(t)];
            for (int j = t + 1; j < d_; ++j) acc_[static_cast<std::size_t>(j)] += m_(t, j);
            descend(t + 1, remaining - 1, sum_u + u_[t], new_m);
            for (int j = t + 1; j < d_; ++j) acc_[static_cast<std::size_t>(j)] -= m_(t, j);
        }
    }

    const Eigen::MatrixXd& m_;
    const Eigen::VectorXd& u_;
    double scale_;
    double scale2_;
    int d_;
    std::vector<double> acc_;
    CompensatedSum total_;
};

template <class PointFn>
double atoms_exact_risk(const DistributionSpec& spec, PointFn&& f) {
    if (const auto* cc = std::get_if<CouponCollector>(&spec.variant())) {
        CompensatedSum acc;
        Eigen::VectorXd x = Eigen::VectorXd::Zero(cc->d);
        for (int j = 0; j < cc->k; ++j) {
            x.setZero();
            x[j] = cc->scale;
            const double v = f(x);
            acc.add(v * v / cc->k);
        }
        return acc.value();
    }
    const auto& fd = std::get<FiniteDiscrete>(spec.variant());
    CompensatedSum acc;
    for (const auto& a : fd.atoms) {
        const double e = a.y - f(a.x);
        acc.add(a.p * e * e);
    }
    return acc.value();
}

}  // namespace detail

inline double exact_predictor_risk(const DistributionSpec& spec,
                                   const std::function<double(const Eigen::VectorXd&)>& f) {
    if (const auto* mix = std::get_if<SparseDenseMixture>(&spec.variant())) {
        return detail::mixture_exact_risk(*mix, f);
    }
    if (std::holds_alternative<WellSpecifiedGaussian>(spec.variant())) {
        throw InvalidSpec("exact_predictor_risk: non-linear predictors need a finitely supported distribution");
    }
    return detail::atoms_exact_risk(spec, f);
}

inline double exact_predictor_risk(const DistributionSpec& spec, const ForsterWarmuthPredictor& fw) {
    if (const auto* mix = std::get_if<SparseDenseMixture>(&spec.variant())) {
        if (fw.gram_invertible()) {
            const double p = mix->sparse_prob();
            const Eigen::VectorXd dense = Eigen::VectorXd::Constant(mix->d, 1.0 / mix->d);
            const double fd = fw.predict(dense);
            detail::FwSupportSweep sweep(fw.gram_pinv(), fw.base_weights(), mix->atom_scale());
            const double sparse_ms = sweep.mean_square(mix->support_size());
            return (1.0 - p) * (1.0 - fd) * (1.0 - fd) + p * sparse_ms;
        }
    }
    return exact_predictor_risk(spec, std::function<double(const Eigen::VectorXd&)>(
                                          [&](const Eigen::VectorXd& x) { return fw.predict(x); }));
}

inline double exact_predictor_risk(const DistributionSpec& spec, const VawBatchPredictor& vb) {
    const auto* mix = std::get_if<SparseDenseMixture>(&spec.variant());
    if (mix == nullptr) {
        return exact_predictor_risk(spec, std::function<double(const Eigen::VectorXd&)>(
                                              [&](const Eigen::VectorXd& x) { return vb.predict(x); }));
    }
    // One prefix sweep serves a whole chunk of query points.
    const int d = mix->d;
    const int s = mix->support_size();
    const double scale = mix->atom_scale();
    constexpr int kChunk = 16384;
    Eigen::MatrixXd pts(kChunk, d);
    int filled = 0;
    CompensatedSum sq;
    Eigen::VectorXd out;
    const auto flush = [&] {
        if (filled == 0) return;
        vb.predict_many(pts.topRows(filled), out);
        for (int i = 0; i < filled; ++i) sq.add(out[i] * out[i]);
        filled = 0;
    };
    detail::for_each_subset(d, s, [&](const std::vector<int>& idx) {
        pts.row(filled).setZero();
        for (int i : idx) pts(filled, i) = scale;
        if (++filled == kChunk) flush();
    });
    flush();
    const double sparse_ms = sq.value() / detail::binomial_count(d, s);
    const double p = mix->sparse_prob();
    const double fd = vb.predict(Eigen::VectorXd::Constant(d, 1.0 / d));
    return (1.0 - p) * (1.0 - fd) * (1.0 - fd) + p * sparse_ms;
}

namespace detail {

inline double fit_and_exact_risk(const DistributionSpec& spec, const PopulationMoments& mom,
                                 const EstimatorDescriptor& desc, const Dataset& data) {
    using Kind = EstimatorDescriptor::Kind;
    switch (desc.kind) {
        case Kind::ConstrainedLs:
            return exact_risk(mom, fit_constrained_ls(data, desc.b).weights);
        case Kind::Ridge:
            return exact_risk(mom, fit_ridge(data, desc.lambda).weights);
        case Kind::MinNorm:
            return exact_risk(mom, min_norm_solve(data.covariates, data.responses));
        case Kind::AdversarialErm:
            return exact_risk(mom, adversarial_erm_select(data, desc.b).weights);
        case Kind::VawBatch:
            return exact_predictor_risk(spec, VawBatchPredictor(data, desc.lambda));
        case Kind::ForsterWarmuth:
            return exact_predictor_risk(spec, ForsterWarmuthPredictor(data));
    }
    throw std::logic_error("unreachable estimator kind");
}

inline ExcessRiskEstimate aggregate_excess(std::vector<double> per_replicate) {
    ExcessRiskEstimate out;
    out.replicates = static_cast<int>(per_replicate.size());
    CompensatedSum sum;
    for (double v : per_replicate) sum.add(v);
    out.mean = sum.value() / out.replicates;
    if (out.replicates > 1) {
        CompensatedSum ss;
        for (double v : per_replicate) ss.add((v - out.mean) * (v - out.mean));
        out.stderr_ = std::sqrt(ss.value() / (out.replicates - 1)) / std::sqrt(double(out.replicates));
    }
    out.per_replicate = std::move(per_replicate);
    return out;
}

}  // namespace detail

// Monte-Carlo excess risk: per replicate, sample n points, fit the estimator,
// and evaluate its exact population risk minus the exact risk of the best
// comparator in the ball of radius comparator_b (default: the descriptor's
// ball, or the unconstrained optimum). No test-set Monte-Carlo anywhere.
inline ExcessRiskEstimate excess_risk_mc(const DistributionSpec& spec, const EstimatorDescriptor& desc,
                                         int n, int replicates, std::uint64_t seed,
                                         std::optional<double> comparator_b = std::nullopt) {
    if (replicates < 1) throw std::invalid_argument("excess_risk_mc: replicates must be >= 1");
    const double cb = comparator_b.value_or(desc.needs_b() ? desc.b : std::numeric_limits<double>::infinity());
    const PopulationMoments mom = population_moments(spec);
    const double opt_risk = optimal_weights(spec, cb).second;
    std::vector<double> per(static_cast<std::size_t>(replicates));
    detail::parallel_for(replicates, [&](int rep) {
        const Dataset data = sample(spec, n, replicate_seed(seed, static_cast<std::uint64_t>(rep)));
        per[static_cast<std::size_t>(rep)] = detail::fit_and_exact_risk(spec, mom, desc, data) - opt_risk;
    });
    return detail::aggregate_excess(std::move(per));
}

// Per-replicate estimates of E xi^2 X^T Sigma_hat_{lambda r^2}^{-1} X. The
// full-sample second moment matrix includes the query point, so by
// exchangeability the estimate averages xi_i^2 X_i^T (lambda r^2 I + sum_k
// X_k X_k^T)^{-1} X_i over i (times n). last_index_only uses only i = n-1,
// the literal definition, for exchangeability checks.
inline std::vector<double> multiplier_term_samples(const DistributionSpec& spec, int n, double lambda,
                                                   int replicates, std::uint64_t seed,
                                                   bool last_index_only = false) {
    if (replicates < 1) throw std::invalid_argument("multiplier_term: replicates must be >= 1");
    const double shift = std::isfinite(spec.r()) ? lambda * spec.r() * spec.r() : lambda;
    const Eigen::VectorXd wstar = optimal_weights(spec, std::numeric_limits<double>::infinity()).first;
    std::vector<double> per(static_cast<std::size_t>(replicates));
    detail::parallel_for(replicates, [&](int rep) {
        const Dataset data = sample(spec, n, replicate_seed(seed, static_cast<std::uint64_t>(rep)));
        const detail::SymEig eig(data.covariates.transpose() * data.covariates);
        Eigen::VectorXd w(data.dim());
        for (int i = 0; i < w.size(); ++i) w[i] = 1.0 / (eig.eigenvalues()[i] + shift);
        const Eigen::VectorXd xi = data.responses - data.covariates * wstar;
        if (last_index_only) {
            const Eigen::VectorXd z = eig.eigenvectors().transpose() * data.covariates.row(n - 1).transpose();
            const double lev = z.array().square().matrix().dot(w);
            per[static_cast<std::size_t>(rep)] = double(n) * xi[n - 1] * xi[n - 1] * lev;
        } else {
            const Eigen::MatrixXd B = data.covariates * eig.eigenvectors();
            const Eigen::VectorXd lev = (B.array().square().rowwise() * w.transpose().array()).rowwise().sum();
            CompensatedSum acc;
            for (int i = 0; i < n; ++i) acc.add(xi[i] * xi[i] * lev[i]);
            per[static_cast<std::size_t>(rep)] = acc.value();
        }
    });
    return per;
}

inline double multiplier_term(const DistributionSpec& spec, int n, double lambda, int replicates,
                              std::uint64_t seed) {
    const auto per = multiplier_term_samples(spec, n, lambda, replicates, seed);
    CompensatedSum acc;
    for (double v : per) acc.add(v);
    return acc.value() / replicates;
}

// Tr((Sigma + lambda I / n)^{-1} Sigma): the lambda-smoothed effective dimension.
inline double effective_dimension(const SymMatrix& sigma, double lambda, int n) {
    if (lambda < 0.0 || n < 1) throw std::invalid_argument("effective_dimension: need lambda >= 0, n >= 1");
    const detail::SymEig eig(sigma.mat());
    double acc = 0.0;
    for (int i = 0; i < eig.eigenvalues().size(); ++i) {
        const double mu = eig.eigenvalues()[i];
        if (mu > 0.0) acc += mu / (mu + lambda / n);
    }
    return acc;
}

// Sparse-draw statistics of the lower-bound construction: the index set I of
// non-dense rows, A = sum_{i in I} X_i X_i^T, the counts vector v, the noise
// zeta, and the quadratic forms driving the excess-risk lower bound.
inline ConstructionStats construction_stats(const Dataset& data) {
    const int d = data.dim();
    const int n = data.n();
    ConstructionStats out;
    out.counts = Eigen::VectorXd::Zero(d);
    out.zeta = Eigen::VectorXd::Zero(d);
    const Eigen::RowVectorXd dense = Eigen::RowVectorXd::Constant(d, 1.0 / d);

    std::vector<int> sparse_rows;
    for (int i = 0; i < n; ++i) {
        if (data.covariates.row(i) != dense) sparse_rows.push_back(i);
    }
    out.sparse_count = static_cast<int>(sparse_rows.size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
    int support_size = 0;
    for (int i : sparse_rows) {
        const Eigen::RowVectorXd row = data.covariates.row(i);
        a.selfadjointView<Eigen::Lower>().rankUpdate(row.transpose());
        if (support_size == 0) {
            for (int j = 0; j < d; ++j) {
                if (row[j] != 0.0) ++support_size;
            }
        }
        for (int j = 0; j < d; ++j) {
            if (row[j] != 0.0) out.counts[j] += 1.0;
        }
    }
    out.a_matrix = SymMatrix(Eigen::MatrixXd(a.selfadjointView<Eigen::Lower>()));
    if (out.sparse_count == 0) return out;

    const double sparse_frac = double(support_size) / d;
    out.zeta = out.counts - Eigen::VectorXd::Constant(d, out.sparse_count * sparse_frac);

    const detail::SymEig eig(out.a_matrix.mat());
    out.lambda_min_a = eig.eigenvalues().minCoeff();
    out.a_invertible = out.lambda_min_a > 1e-12;
    if (out.a_invertible) {
        const Eigen::VectorXd ones = Eigen::VectorXd::Ones(d);
        const Eigen::VectorXd a1 = eig.shifted_solve(ones, 0.0);
        out.q_form_1A1 = ones.dot(a1);
        out.q_form_1A21 = a1.squaredNorm();
        out.q_form_zAz = out.zeta.dot(eig.shifted_solve(out.zeta, 0.0));
    }
    return out;
}

// L4-L2 diagnostics: noise ratio ||xi||_L4 / ||xi||_L2 and the max over a
// probe set of directions of sqrt(E<w,X>^4) / E<w,X>^2. The design ratio is a
// lower bound on the supremum over all directions.
inline std::pair<double, double> moment_equivalence_constants(const DistributionSpec& spec, int sample_size,
                                                              std::uint64_t seed) {
    const int d = spec.dim();
    const Dataset data = sample(spec, sample_size, seed);
    const Eigen::VectorXd wstar = optimal_weights(spec, std::numeric_limits<double>::infinity()).first;
    const Eigen::VectorXd xi = data.responses - data.covariates * wstar;
    const double m2 = xi.array().square().mean();
    const double m4 = xi.array().square().square().mean();
    const double noise_ratio = m2 > 0.0 ? std::pow(m4, 0.25) / std::sqrt(m2) : 1.0;

    std::vector<Eigen::VectorXd> probes;
    probes.reserve(static_cast<std::size_t>(d) + 102);
    for (int j = 0; j < d; ++j) probes.push_back(Eigen::VectorXd::Unit(d, j));
    probes.push_back(Eigen::VectorXd::Constant(d, 1.0 / std::sqrt(double(d))));
    if (std::holds_alternative<SparseDenseMixture>(spec.variant())) {
        const auto pilot = construction_stats(
            sample(spec, std::min(sample_size, 20000), mix64(seed ^ 0x50494C4F54ULL)));
        const double zn = pilot.zeta.norm();
        if (zn > 0.0) probes.push_back(pilot.zeta / zn);
    }
    Rng rng(seed, 0x70726F6265ULL);
    for (int t = 0; t < 100; ++t) {
        Eigen::VectorXd g(d);
        for (int j = 0; j < d; ++j) g[j] = rng.next_gaussian();
        const double nn = g.norm();
        if (nn > 0.0) probes.push_back(g / nn);
    }

    double design_ratio = 0.0;
    for (const auto& w : probes) {
        const Eigen::ArrayXd z = (data.covariates * w).array();
        const double z2 = z.square().mean();
        if (z2 <= 0.0) continue;
        const double z4 = z.square().square().mean();
        design_ratio = std::max(design_ratio, std::sqrt(z4) / z2);
    }
    return {noise_ratio, design_ratio};
}

// Reference curves, bare formulas with no constants inserted.
inline BoundOverlay bound_overlay(int d, int n, double m, double r, double b) {
    if (d < 1 || n < 1 || !(m > 0.0) || !(r > 0.0) || b < 0.0) {
        throw std::invalid_argument("bound_overlay: need d,n >= 1, m,r > 0, b >= 0");
    }
    BoundOverlay out;
    const double dn = double(n);
    out.shamir_fast = d * m * m / dn + r * r * b * b / dn;
    out.slow_rate = std::min(m * m, std::min(d * m * m / dn, r * b * m / std::sqrt(dn)) + r * r * b * b / dn);
    out.localized_upper = d * m * m / dn + d * r * r * b * b / dn;
    out.d32_curve = std::pow(double(d), 1.5) * m * m / dn;
    return out;
}

struct RidgeBoundReport {
    double observed_excess = 0.0;
    double multiplier = 0.0;  // E xi^2 X^T Sigma_hat_lambda^{-1} X
    double c_hat = 0.0;       // observed / (multiplier/n + lambda b^2 / n)
};

// C_hat calibration for the ridge bound: report only, the bound's absolute
// constant is unspecified.
inline RidgeBoundReport ridge_multiplier_bound_check(const DistributionSpec& spec, int n, double lambda,
                                                     double b, int replicates, std::uint64_t seed) {
    if (std::isfinite(spec.r()) && lambda < spec.r() * spec.r()) {
        throw std::invalid_argument("ridge_multiplier_bound_check: requires lambda >= r^2");
    }
    RidgeBoundReport out;
    out.observed_excess =
        excess_risk_mc(spec, EstimatorDescriptor::ridge(lambda), n, replicates, seed, b).mean;
    const double lambda_arg = std::isfinite(spec.r()) ? lambda / (spec.r() * spec.r()) : lambda;
    out.multiplier = multiplier_term(spec, n, lambda_arg, replicates, mix64(seed ^ 0x52494447ULL));
    out.c_hat = out.observed_excess / (out.multiplier / n + lambda * b * b / n);
    return out;
}

// One-stop report for the CLI `diagnose` subcommand.
inline DiagnosticsReport diagnose(const DistributionSpec& spec, int n, double lambda, double b,
                                  int replicates, int moment_samples, std::uint64_t seed) {
    DiagnosticsReport out;
    out.multiplier_term = multiplier_term(spec, n, lambda, replicates, seed);
    out.effective_dimension =
        effective_dimension(population_moments(spec).second_moment, lambda, n);
    const auto ratios = moment_equivalence_constants(spec, moment_samples, mix64(seed ^ 0x4D4F4DULL));
    out.noise_l4_l2 = ratios.first;
    out.design_l4_l2 = ratios.second;
    const Dataset data = sample(spec, n, replicate_seed(seed, 0));
    const double shift = std::isfinite(spec.r()) ? lambda * spec.r() * spec.r() : lambda;
    out.leverage_max = leverage_scores(data.covariates, shift).values.maxCoeff();
    const double bb = std::isfinite(b) ? b : std::sqrt(double(spec.dim()));
    out.bound_overlay = bound_overlay(spec.dim(), n, std::isfinite(spec.m()) ? spec.m() : 1.0,
                                      std::isfinite(spec.r()) ? spec.r() : 1.0, bb);
    return out;
}

}  // namespace lsqgap
