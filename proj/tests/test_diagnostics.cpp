#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "lsqgap/diagnostics.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace lsqgap;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / v.size();
}

double stderr_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / (v.size() - 1.0)) / std::sqrt(double(v.size()));
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size() / 2;
    return v.size() % 2 == 1 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

}  // namespace

TEST(EffectiveDimension, IdentityCovariance) {
    const int d = 6, n = 100;
    EXPECT_NEAR(effective_dimension(SymMatrix::Identity(d), double(n), n), d / 2.0, 1e-12);
    EXPECT_NEAR(effective_dimension(SymMatrix::Identity(d), 0.0, n), double(d), 1e-12);
}

TEST(EffectiveDimension, ScalarSumOracle) {
    MatrixXd sig = MatrixXd::Zero(2, 2);
    sig(0, 0) = 1.0;
    sig(1, 1) = 1e-6;
    const int n = 1000;
    const double lam_over_n = 1e-3;
    const double expect = 1.0 / (1.0 + lam_over_n) + 1e-6 / (1e-6 + lam_over_n);
    EXPECT_NEAR(effective_dimension(SymMatrix(sig), lam_over_n * n, n), expect, 1e-12);
}

TEST(EffectiveDimension, MonotoneDecreasingInLambda) {
    Rng rng(107, 0);
    for (int t = 0; t < 5; ++t) {
        const int d = 3 + static_cast<int>(rng.next_below(5));
        MatrixXd r(d, d);
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) r(i, j) = rng.next_gaussian();
        }
        const SymMatrix sig(r * r.transpose() + 0.1 * MatrixXd::Identity(d, d));
        double prev = double(d) + 1.0;
        for (int i = 0; i < 10; ++i) {
            const double lambda = 0.01 * std::pow(4.0, i);
            const double eff = effective_dimension(sig, lambda, 50);
            ASSERT_LT(eff, prev);
            ASSERT_GT(eff, 0.0);
            ASSERT_LE(eff, double(d));
            prev = eff;
        }
    }
}

TEST(BoundOverlay, HandValues) {
    const BoundOverlay b = bound_overlay(16, 1600, 1.0, 1.0, 4.0);
    EXPECT_NEAR(b.shamir_fast, 0.02, 1e-15);
    EXPECT_NEAR(b.localized_upper, 0.17, 1e-15);
    EXPECT_NEAR(b.d32_curve, 64.0 / 1600.0, 1e-15);
    const BoundOverlay z = bound_overlay(16, 1600, 1.0, 1.0, 0.0);
    EXPECT_NEAR(z.shamir_fast, 0.01, 1e-15);
}

TEST(BoundOverlay, ShamirNeverExceedsLocalized) {
    Rng rng(109, 0);
    for (int t = 0; t < 200; ++t) {
        const int d = 1 + static_cast<int>(rng.next_below(60));
        const int n = 1 + static_cast<int>(rng.next_below(5000));
        const double m = 0.1 + rng.next_double() * 3;
        const double r = 0.1 + rng.next_double() * 3;
        const double b = rng.next_double() * 5;
        const BoundOverlay ov = bound_overlay(d, n, m, r, b);
        ASSERT_LE(ov.shamir_fast, ov.localized_upper + 1e-15);
    }
}

TEST(Multiplier, ZeroNoiseGivesZero) {
    const auto spec = DistributionSpec::coupon_collector(6, 6);
    EXPECT_NEAR(multiplier_term(spec, 50, 1.0, 5, 3), 0.0, 1e-14);
}

TEST(Multiplier, ExchangeableIndicesAgree) {
    const auto spec = DistributionSpec::sparse_dense_mixture(4);
    const int n = 100, reps = 2000;
    const auto avg = multiplier_term_samples(spec, n, 1.0, reps, 5);
    const auto last = multiplier_term_samples(spec, n, 1.0, reps, 6, /*last_index_only=*/true);
    const double gap = std::abs(mean_of(avg) - mean_of(last));
    const double joint = std::sqrt(stderr_of(avg) * stderr_of(avg) + stderr_of(last) * stderr_of(last));
    EXPECT_LE(gap, 3.0 * joint) << "avg=" << mean_of(avg) << " last=" << mean_of(last);
}

TEST(Multiplier, IndependentNoiseFactorsThroughEffectiveTrace) {
    // well-specified gaussian: E xi^2 X^T S^-1 X = R(w*) E Tr(S^-1 S_0)
    VectorXd w(4);
    w << 0.5, -0.3, 0.2, 0.1;
    const auto spec = DistributionSpec::gaussian(SymMatrix::Identity(4), w, 1.0);
    const int n = 150, reps = 400;
    const double lambda = 2.0;
    const auto lhs = multiplier_term_samples(spec, n, lambda, reps, 11);
    std::vector<double> rhs(reps);
    for (int rep = 0; rep < reps; ++rep) {
        const Dataset data = sample(spec, n, replicate_seed(12, rep));
        const MatrixXd g = data.covariates.transpose() * data.covariates;
        rhs[rep] = ((g + lambda * MatrixXd::Identity(4, 4)).ldlt().solve(g)).trace();  // R(w*) = 1
    }
    const double gap = std::abs(mean_of(lhs) - mean_of(rhs));
    const double joint = std::sqrt(stderr_of(lhs) * stderr_of(lhs) + stderr_of(rhs) * stderr_of(rhs));
    EXPECT_LE(gap, 3.0 * joint) << "lhs=" << mean_of(lhs) << " rhs=" << mean_of(rhs);
}

TEST(Multiplier, MixtureAmplificationGrowsWithDimension) {
    // brute-force oracle values: ratio to d m^2 is ~0.72 at d=16 (n=8192) and
    // ~1.72 at d=64 (n=65536); the sqrt(d) amplification is the point.
    const double r16 = multiplier_term(DistributionSpec::sparse_dense_mixture(16), 8192, 1.0, 3, 7) / 16.0;
    const double r64 = multiplier_term(DistributionSpec::sparse_dense_mixture(64), 65536, 1.0, 2, 7) / 64.0;
    EXPECT_GE(r16, 0.5);
    EXPECT_LE(r16, 0.9);
    EXPECT_GE(r64 / r16, 1.8);
    EXPECT_LE(r64 / r16, 3.2);
}

TEST(MomentEquivalence, GaussianNoiseRatioIsFourthRootOfThree) {
    VectorXd w = VectorXd::Zero(3);
    const auto spec = DistributionSpec::gaussian(SymMatrix::Identity(3), w, 1.0);
    const auto [noise, design] = moment_equivalence_constants(spec, 100000, 13);
    EXPECT_NEAR(noise, std::pow(3.0, 0.25), 0.05);
    EXPECT_NEAR(design, std::sqrt(3.0), 0.25);
}

TEST(MomentEquivalence, ConstantNoiseGivesRatioOne) {
    // two atoms +-e1 with responses c +- a: the optimal linear predictor leaves
    // xi identically equal to c
    std::vector<FiniteAtom> atoms{{VectorXd::Unit(2, 0), 0.9, 0.5}, {-VectorXd::Unit(2, 0), 0.1, 0.5}};
    const auto spec = DistributionSpec::finite_discrete(atoms);
    const auto [noise, design] = moment_equivalence_constants(spec, 20000, 17);
    EXPECT_NEAR(noise, 1.0, 1e-9);
}

TEST(MomentEquivalence, MixtureAxisDirectionIsIllBehaved) {
    const auto [noise16, design16] = moment_equivalence_constants(DistributionSpec::sparse_dense_mixture(16), 100000, 19);
    // Bernoulli-like coordinate marginals: design_ratio^2 is an order of
    // magnitude above the gaussian value 3 already at d=16
    EXPECT_GE(design16 * design16, 6.0);
    EXPECT_LE(design16 * design16, 25.0);
    // noise oracle: xi^2 is two-valued, (1-c)^2 w.p. 1-p and c^2 sqrt(d) w.p. p
    const double c = 3.0 / 7.0, p = 0.25;
    const double xi2_dense = (1 - c) * (1 - c), xi2_sparse = c * c * 4.0;
    const double m2 = (1 - p) * xi2_dense + p * xi2_sparse;
    const double m4 = (1 - p) * xi2_dense * xi2_dense + p * xi2_sparse * xi2_sparse;
    EXPECT_NEAR(noise16, std::pow(m4, 0.25) / std::sqrt(m2), 0.01);
}

TEST(ConstructionStats, AllDenseDatasetHasNoSparsePart) {
    const int d = 8, n = 20;
    Dataset data;
    data.covariates = MatrixXd::Constant(n, d, 1.0 / d);
    data.responses = VectorXd::Ones(n);
    data.r = 1.0;
    data.m = 1.0;
    const ConstructionStats st = construction_stats(data);
    EXPECT_EQ(st.sparse_count, 0);
    EXPECT_FALSE(st.a_invertible);
    EXPECT_EQ(st.counts.norm(), 0.0);
    EXPECT_TRUE(std::isnan(st.q_form_1A1));
}

TEST(ConstructionStats, SparseCountTracksBinomialMean) {
    const int d = 16, n = 1600;
    const auto spec = DistributionSpec::sparse_dense_mixture(d);
    const ConstructionStats st = construction_stats(sample(spec, n, 23));
    EXPECT_NEAR(double(st.sparse_count), n / std::sqrt(double(d)), 5.0 * std::sqrt(n / std::sqrt(double(d))));
}

TEST(ConstructionStats, CountIdentitiesHoldExactly) {
    for (int d : {16, 25}) {
        const auto spec = DistributionSpec::sparse_dense_mixture(d);
        const Dataset data = sample(spec, 3000, 29 + d);
        const ConstructionStats st = construction_stats(data);
        ASSERT_GT(st.sparse_count, 0);
        // A 1 = v and <zeta, 1> = 0 up to roundoff (s/d is not dyadic for d = 25)
        EXPECT_LE((st.a_matrix.mat() * VectorXd::Ones(d) - st.counts).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_NEAR(st.zeta.sum(), 0.0, 1e-10);
        // v = |I| d^{-1/2} 1 + zeta by definition
        const VectorXd recon = st.zeta + VectorXd::Constant(d, st.sparse_count / std::sqrt(double(d)));
        EXPECT_LE((recon - st.counts).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(ConstructionStats, ZetaNormScalesLikeSampleSize) {
    // median ||zeta||^2 / n within [0.2, 5] at n = d^3 ln d
    for (int d : {16, 25, 36}) {
        const int n = static_cast<int>(std::ceil(std::pow(double(d), 3.0) * std::log(double(d))));
        const auto spec = DistributionSpec::sparse_dense_mixture(d);
        std::vector<double> ratios;
        for (int rep = 0; rep < 100; ++rep) {
            const ConstructionStats st = construction_stats(sample(spec, n, replicate_seed(31, rep)));
            ratios.push_back(st.zeta.squaredNorm() / n);
        }
        const double med = median_of(ratios);
        EXPECT_GE(med, 0.2) << "d=" << d;
        EXPECT_LE(med, 5.0) << "d=" << d;
    }
}

TEST(ExactPredictorRisk, ConstantPredictorClosedForm) {
    const auto spec = DistributionSpec::sparse_dense_mixture(16);
    const double c = 0.37;
    const double got = exact_predictor_risk(spec, std::function<double(const VectorXd&)>(
                                                      [&](const VectorXd&) { return c; }));
    const double p = 0.25;
    EXPECT_NEAR(got, (1 - p) * (1 - c) * (1 - c) + p * c * c, 1e-12);
}

TEST(ExactPredictorRisk, LinearFunctionMatchesMomentFormula) {
    const auto spec = DistributionSpec::sparse_dense_mixture(9);
    VectorXd w(9);
    for (int j = 0; j < 9; ++j) w[j] = 0.1 * (j + 1);
    const double via_enum = exact_predictor_risk(
        spec, std::function<double(const VectorXd&)>([&](const VectorXd& x) { return w.dot(x); }));
    EXPECT_NEAR(via_enum, exact_risk(spec, w), 1e-12);
}

TEST(ExactPredictorRisk, ForsterWarmuthFastPathMatchesGeneric) {
    const auto spec = DistributionSpec::sparse_dense_mixture(9);
    const Dataset data = sample(spec, 500, 37);
    const ForsterWarmuthPredictor fw(data);
    ASSERT_TRUE(fw.gram_invertible());
    const double fast = exact_predictor_risk(spec, fw);
    const double generic = exact_predictor_risk(
        spec, std::function<double(const VectorXd&)>([&](const VectorXd& x) { return fw.predict(x); }));
    EXPECT_NEAR(fast, generic, 1e-12);
}

TEST(ExactPredictorRisk, ForsterWarmuthSingularGramFallsBack) {
    const auto spec = DistributionSpec::sparse_dense_mixture(9);
    const Dataset data = sample(spec, 3, 41);
    const ForsterWarmuthPredictor fw(data);
    const double risk = exact_predictor_risk(spec, fw);
    EXPECT_GE(risk, 0.0);
    EXPECT_LE(risk, 1.0);
}

TEST(ExactPredictorRisk, VawBatchChunkedMatchesPointwise) {
    const auto spec = DistributionSpec::sparse_dense_mixture(9);
    const Dataset data = sample(spec, 40, 43);
    const VawBatchPredictor vb(data, 2.0);
    const double chunked = exact_predictor_risk(spec, vb);
    const double generic = exact_predictor_risk(
        spec, std::function<double(const VectorXd&)>([&](const VectorXd& x) { return vb.predict(x); }));
    EXPECT_NEAR(chunked, generic, 1e-12);
}

TEST(ExactPredictorRisk, GaussianRejectsNonLinearPredictors) {
    const auto spec = DistributionSpec::gaussian(SymMatrix::Identity(3), VectorXd::Zero(3), 1.0);
    EXPECT_THROW(exact_predictor_risk(spec, std::function<double(const VectorXd&)>(
                                                [](const VectorXd&) { return 0.0; })),
                 InvalidSpec);
}

TEST(ExcessRiskMc, CouponWithAllAtomsObservedIsExactlyZero) {
    const auto spec = DistributionSpec::coupon_collector(5, 5);
    for (const auto desc : {EstimatorDescriptor::constrained_ls(1.0), EstimatorDescriptor::min_norm(),
                            EstimatorDescriptor::adversarial_erm(1.0)}) {
        const ExcessRiskEstimate est = excess_risk_mc(spec, desc, 400, 8, 47);
        for (double v : est.per_replicate) ASSERT_NEAR(v, 0.0, 1e-12) << desc.tag();
    }
}

TEST(ExcessRiskMc, GaussianOlsMatchesWishartOracle) {
    // exact OLS excess risk on a well-specified gaussian: sigma^2 d/(n-d-1)
    VectorXd w(3);
    w << 0.3, -0.2, 0.5;
    const auto spec = DistributionSpec::gaussian(SymMatrix::Identity(3), w, 1.0);
    const int n = 60;
    const ExcessRiskEstimate est = excess_risk_mc(spec, EstimatorDescriptor::min_norm(), n, 400, 53);
    const double oracle = 3.0 / (n - 3 - 1);
    EXPECT_NEAR(est.mean, oracle, 4.0 * est.stderr_) << "mean=" << est.mean << " se=" << est.stderr_;
    EXPECT_GE(est.mean, -3.0 * est.stderr_);  // proper-estimator sign check
}

TEST(ExcessRiskMc, ForsterWarmuthStaysBelowTenTimesDOverN) {
    const auto spec = DistributionSpec::sparse_dense_mixture(16);
    const int n = 10000;
    const ExcessRiskEstimate est =
        excess_risk_mc(spec, EstimatorDescriptor::forster_warmuth(), n, 4, 59);
    EXPECT_LE(est.mean, 10.0 * 16.0 / n);
}

TEST(ExcessRiskMc, ProperEstimatorExcessIsNonNegative) {
    const auto spec = DistributionSpec::sparse_dense_mixture(16);
    const ExcessRiskEstimate est =
        excess_risk_mc(spec, EstimatorDescriptor::constrained_ls(4.0), 2000, 8, 61);
    EXPECT_GE(est.mean, -3.0 * est.stderr_);
    EXPECT_GT(est.mean, 0.0);
}

TEST(RidgeBoundCheck, GaussianCalibrationConstantIsModerate) {
    VectorXd w(5);
    w << 0.2, 0.2, 0.2, 0.2, 0.2;
    const auto spec = DistributionSpec::gaussian(SymMatrix::Identity(5), w, 1.0);
    const RidgeBoundReport rep = ridge_multiplier_bound_check(spec, 200, 1.0, 2.0, 100, 67);
    EXPECT_TRUE(std::isfinite(rep.c_hat));
    EXPECT_LT(rep.c_hat, 100.0);
}

TEST(RidgeBoundCheck, RequiresLambdaAtLeastRSquared) {
    const auto spec = DistributionSpec::sparse_dense_mixture(16);  // r = 1
    EXPECT_THROW(ridge_multiplier_bound_check(spec, 100, 0.5, 1.0, 4, 71), std::invalid_argument);
}

TEST(RidgeBoundCheck, HugeLambdaRecoversZeroPredictorGap) {
    std::vector<FiniteAtom> atoms{{VectorXd::Unit(2, 0), 1.0, 0.5}, {VectorXd::Unit(2, 1), -0.4, 0.5}};
    const auto spec = DistributionSpec::finite_discrete(atoms);
    const double r0 = exact_risk(spec, VectorXd::Zero(2));
    const double rstar = optimal_weights(spec, kInf).second;
    const ExcessRiskEstimate est = excess_risk_mc(spec, EstimatorDescriptor::ridge(1e9), 50, 8, 73);
    EXPECT_NEAR(est.mean, r0 - rstar, 1e-4);
}
