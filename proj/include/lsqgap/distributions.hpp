#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lsqgap/errors.hpp"
#include "lsqgap/linalg.hpp"
#include "lsqgap/rng.hpp"

namespace lsqgap {

// Mixture of a fixed dense covariate (response 1) and uniformly random sparse
// supports (response 0). sparse_exponent a generalizes the canonical a = 1/2
// family: sparse probability d^-a, support size d^a, atom scale d^(-a/2) so
// every covariate has norm <= 1. Non-canonical for a != 1/2.
struct SparseDenseMixture {
    int d = 0;
    double sparse_exponent = 0.5;

    int support_size() const { return static_cast<int>(std::llround(std::pow(double(d), sparse_exponent))); }
    double sparse_prob() const { return std::pow(double(d), -sparse_exponent); }
    double atom_scale() const { return 1.0 / std::sqrt(double(support_size())); }
};

// Uniform distribution over the atoms scale*e_1, ..., scale*e_k with y = 0.
struct CouponCollector {
    int d = 0;
    int k = 0;
    double scale = 1.0;
};

// X ~ N(0, Sigma), Y = <w_true, X> + noise_sd * xi with xi ~ N(0, 1).
struct WellSpecifiedGaussian {
    int d = 0;
    SymMatrix sigma = SymMatrix::Identity(1);
    Eigen::VectorXd w_true;
    double noise_sd = 0.0;
};

struct FiniteAtom {
    Eigen::VectorXd x;
    double y = 0.0;
    double p = 0.0;
};

struct FiniteDiscrete {
    std::vector<FiniteAtom> atoms;
};

class DistributionSpec {
public:
    using Variant = std::variant<SparseDenseMixture, CouponCollector, WellSpecifiedGaussian, FiniteDiscrete>;

    static DistributionSpec sparse_dense_mixture(int d, double sparse_exponent = 0.5) {
        if (d < 1) throw InvalidSpec("sparse_dense_mixture: d must be >= 1");
        if (sparse_exponent < 0.0 || sparse_exponent > 0.5) {
            throw InvalidSpec("sparse_dense_mixture: sparse_exponent must lie in [0, 1/2]");
        }
        const double s_real = std::pow(double(d), sparse_exponent);
        const double s_round = std::llround(s_real);
        if (std::abs(s_real - s_round) > 1e-9 || s_round < 1.0 || s_round > double(d)) {
            throw InvalidSpec("sparse_dense_mixture: d^sparse_exponent must be a positive integer <= d");
        }
        SparseDenseMixture v{d, sparse_exponent};
        return DistributionSpec(Variant(v), /*r=*/1.0, /*m=*/1.0, d, "sparse_dense_mixture");
    }

    static DistributionSpec coupon_collector(int d, int k, double scale = 1.0) {
        if (d < 1 || k < 1 || k > d) throw InvalidSpec("coupon_collector: need 1 <= k <= d");
        if (!(scale > 0.0)) throw InvalidSpec("coupon_collector: scale must be positive");
        CouponCollector v{d, k, scale};
        return DistributionSpec(Variant(v), /*r=*/scale, /*m=*/0.0, d, "coupon_collector");
    }

    static DistributionSpec gaussian(SymMatrix sigma, Eigen::VectorXd w_true, double noise_sd) {
        const int d = sigma.dim();
        if (w_true.size() != d) throw InvalidSpec("gaussian: w_true dimension mismatch");
        if (noise_sd < 0.0) throw InvalidSpec("gaussian: noise_sd must be nonnegative");
        const detail::SymEig eig(sigma.mat());
        if (eig.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, eig.eigenvalues().maxCoeff())) {
            throw InvalidSpec("gaussian: sigma must be positive semidefinite");
        }
        const double inf = std::numeric_limits<double>::infinity();
        WellSpecifiedGaussian v{d, std::move(sigma), std::move(w_true), noise_sd};
        return DistributionSpec(Variant(std::move(v)), /*r=*/inf, /*m=*/inf, d, "gaussian");
    }

    static DistributionSpec finite_discrete(std::vector<FiniteAtom> atoms) {
        if (atoms.empty()) throw InvalidSpec("finite_discrete: need at least one atom");
        const int d = static_cast<int>(atoms.front().x.size());
        double psum = 0.0, r = 0.0, m = 0.0;
        for (const auto& a : atoms) {
            if (a.x.size() != d) throw InvalidSpec("finite_discrete: atom dimension mismatch");
            if (a.p < 0.0) throw InvalidSpec("finite_discrete: negative probability");
            psum += a.p;
            r = std::max(r, a.x.norm());
            m = std::max(m, std::abs(a.y));
        }
        if (std::abs(psum - 1.0) > 1e-12) throw InvalidSpec("finite_discrete: probabilities must sum to 1");
        FiniteDiscrete v{std::move(atoms)};
        return DistributionSpec(Variant(std::move(v)), r, m, d, "finite_discrete");
    }

    int dim() const { return d_; }
    double r() const { return r_; }
    double m() const { return m_; }
    bool bounded() const { return std::isfinite(r_) && std::isfinite(m_); }
    const Variant& variant() const { return variant_; }
    const std::string& tag() const { return tag_; }

private:
    DistributionSpec(Variant v, double r, double m, int d, std::string tag)
        : variant_(std::move(v)), r_(r), m_(m), d_(d), tag_(std::move(tag)) {}

    Variant variant_;
    double r_;
    double m_;
    int d_;
    std::string tag_;
};

struct PopulationMoments {
    SymMatrix second_moment = SymMatrix::Identity(1);        // E XX^T
    Eigen::VectorXd cross;                                   // E XY
    double y_second = 0.0;                                   // E Y^2
    std::optional<std::pair<double, double>> structured_form; // Sigma = alpha 11^T + beta I
};

struct Dataset {
    Eigen::MatrixXd covariates;  // n x d
    Eigen::VectorXd responses;   // n
    double r = 0.0;
    double m = 0.0;

    int n() const { return static_cast<int>(covariates.rows()); }
    int dim() const { return static_cast<int>(covariates.cols()); }

    Dataset without_row(int i) const {
        Dataset out;
        out.covariates.resize(n() - 1, dim());
        out.responses.resize(n() - 1);
        int at = 0;
        for (int j = 0; j < n(); ++j) {
            if (j == i) continue;
            out.covariates.row(at) = covariates.row(j);
            out.responses[at] = responses[j];
            ++at;
        }
        out.r = r;
        out.m = m;
        return out;
    }
};

namespace detail {

inline void sample_draw(const DistributionSpec& spec, Rng& rng, const Eigen::MatrixXd* gauss_sqrt,
                        Eigen::VectorXd& x, double& y) {
    if (const auto* mix = std::get_if<SparseDenseMixture>(&spec.variant())) {
        const double p = mix->sparse_prob();
        if (rng.next_double() < p) {
            x.setZero();
            const auto support = rng.sample_subset(mix->d, mix->support_size());
            const double s = mix->atom_scale();
            for (int idx : support) x[idx] = s;
            y = 0.0;
        } else {
            x.setConstant(1.0 / mix->d);
            y = 1.0;
        }
    } else if (const auto* cc = std::get_if<CouponCollector>(&spec.variant())) {
        x.setZero();
        x[static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cc->k)))] = cc->scale;
        y = 0.0;
    } else if (const auto* g = std::get_if<WellSpecifiedGaussian>(&spec.variant())) {
        Eigen::VectorXd z(g->d);
        for (int j = 0; j < g->d; ++j) z[j] = rng.next_gaussian();
        x = *gauss_sqrt * z;
        y = x.dot(g->w_true) + g->noise_sd * rng.next_gaussian();
    } else {
        const auto& fd = std::get<FiniteDiscrete>(spec.variant());
        const double u = rng.next_double();
        double acc = 0.0;
        const FiniteAtom* pick = &fd.atoms.back();
        for (const auto& a : fd.atoms) {
            acc += a.p;
            if (u < acc) { pick = &a; break; }
        }
        x = pick->x;
        y = pick->y;
    }
}

}  // namespace detail

// n i.i.d. draws; draw i is a pure function of (spec, seed, i), so the result
// is bit-identical regardless of evaluation order.
inline Dataset sample(const DistributionSpec& spec, int n, std::uint64_t seed) {
    if (n < 1) throw InvalidSpec("sample: n must be >= 1");
    Dataset out;
    out.covariates.resize(n, spec.dim());
    out.responses.resize(n);
    out.r = spec.r();
    out.m = spec.m();
    Eigen::MatrixXd gauss_sqrt;
    if (const auto* g = std::get_if<WellSpecifiedGaussian>(&spec.variant())) {
        const detail::SymEig eig(g->sigma.mat());
        Eigen::VectorXd s = eig.eigenvalues();
        for (int i = 0; i < s.size(); ++i) s[i] = std::sqrt(std::max(0.0, s[i]));
        gauss_sqrt = eig.eigenvectors() * s.asDiagonal() * eig.eigenvectors().transpose();
    }
    Eigen::VectorXd x(spec.dim());
    for (int i = 0; i < n; ++i) {
        Rng rng(seed, static_cast<std::uint64_t>(i));
        detail::sample_draw(spec, rng, gauss_sqrt.size() ? &gauss_sqrt : nullptr, x, out.responses[i]);
        out.covariates.row(i) = x.transpose();
    }
    return out;
}

inline PopulationMoments population_moments(const DistributionSpec& spec) {
    PopulationMoments out;
    const int d = spec.dim();
    if (const auto* mix = std::get_if<SparseDenseMixture>(&spec.variant())) {
        const double p = mix->sparse_prob();
        const int s = mix->support_size();
        // Dense atom contributes (1-p)/d^2 everywhere; a sparse atom has
        // P(i in S) = s/d and P(i,j in S) = s(s-1)/(d(d-1)).
        const double alpha = (1.0 - p) / (double(d) * d)
                           + (d > 1 ? p * (s - 1.0) / (double(d) * (d - 1.0)) : 0.0);
        const double beta = p / double(d) - (d > 1 ? p * (s - 1.0) / (double(d) * (d - 1.0)) : 0.0);
        Eigen::MatrixXd sig = Eigen::MatrixXd::Constant(d, d, alpha);
        sig.diagonal().array() += beta;
        out.second_moment = SymMatrix(std::move(sig));
        out.cross = Eigen::VectorXd::Constant(d, (1.0 - p) / d);
        out.y_second = 1.0 - p;
        out.structured_form = std::make_pair(alpha, beta);
    } else if (const auto* cc = std::get_if<CouponCollector>(&spec.variant())) {
        Eigen::MatrixXd sig = Eigen::MatrixXd::Zero(d, d);
        for (int i = 0; i < cc->k; ++i) sig(i, i) = cc->scale * cc->scale / cc->k;
        out.second_moment = SymMatrix(std::move(sig));
        out.cross = Eigen::VectorXd::Zero(d);
        out.y_second = 0.0;
    } else if (const auto* g = std::get_if<WellSpecifiedGaussian>(&spec.variant())) {
        out.second_moment = g->sigma;
        out.cross = g->sigma.mat() * g->w_true;
        out.y_second = g->w_true.dot(out.cross) + g->noise_sd * g->noise_sd;
    } else {
        const auto& fd = std::get<FiniteDiscrete>(spec.variant());
        Eigen::MatrixXd sig = Eigen::MatrixXd::Zero(d, d);
        Eigen::VectorXd cross = Eigen::VectorXd::Zero(d);
        double y2 = 0.0;
        for (const auto& a : fd.atoms) {
            sig.noalias() += a.p * (a.x * a.x.transpose());
            cross.noalias() += (a.p * a.y) * a.x;
            y2 += a.p * a.y * a.y;
        }
        out.second_moment = SymMatrix(std::move(sig));
        out.cross = std::move(cross);
        out.y_second = y2;
    }
    return out;
}

// R(w) = E (Y - <w, X>)^2 from exact moments.
inline double exact_risk(const PopulationMoments& mom, const Eigen::VectorXd& w) {
    return mom.y_second - 2.0 * w.dot(mom.cross) + w.dot(mom.second_moment.mat() * w);
}

inline double exact_risk(const DistributionSpec& spec, const Eigen::VectorXd& w) {
    return exact_risk(population_moments(spec), w);
}

// argmin of the exact risk over ||w|| <= b (b may be infinite), via the same
// trust-region solve used for constrained least squares, applied to the
// population quadratic. Returns the minimizer and its risk.
inline std::pair<Eigen::VectorXd, double> optimal_weights(const DistributionSpec& spec, double b) {
    const PopulationMoments mom = population_moments(spec);
    const detail::SymEig eig(mom.second_moment.mat());
    Eigen::VectorXd w;
    if (std::isinf(b)) {
        w = eig.pinv_solve(mom.cross);
    } else {
        w = detail::trust_region_solve(eig, mom.cross, b).weights;
    }
    return {w, exact_risk(mom, w)};
}

// Smallest k with n <= (1/2) k ln k, floored at 38.
inline int coupon_k(int n) {
    if (n < 1) throw InvalidSpec("coupon_k: n must be >= 1");
    int k = 2;
    while (0.5 * k * std::log(double(k)) < double(n)) ++k;
    return std::max(38, k);
}

namespace detail {

inline double binomial_count(int d, int k) {
    double c = 1.0;
    for (int i = 0; i < k; ++i) c = c * (d - i) / (i + 1);
    return c;
}

// Lexicographic enumeration of all k-subsets of {0..d-1}.
template <class Visit>
void for_each_subset(int d, int k, Visit&& visit) {
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
    while (true) {
        visit(idx);
        int i = k - 1;
        while (i >= 0 && idx[static_cast<std::size_t>(i)] == d - k + i) --i;
        if (i < 0) break;
        ++idx[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < k; ++j) {
            idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
        }
    }
}

}  // namespace detail

}  // namespace lsqgap
