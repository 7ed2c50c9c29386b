#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <iostream>
#include <utility>

#include "lsqgap/distributions.hpp"
#include "lsqgap/errors.hpp"
#include "lsqgap/linalg.hpp"

namespace lsqgap {

struct PredictorMeta {
    bool constraint_active = false;
    double multiplier = 0.0;  // KKT multiplier of the ball constraint
};

struct LinearPredictor {
    Eigen::VectorXd weights;
    PredictorMeta meta;

    double predict(const Eigen::VectorXd& x) const { return weights.dot(x); }
};

// Global minimizer of sum_i (y_i - <w, x_i>)^2 over ||w|| <= b. Interior case
// returns the min-norm solution; boundary case solves the exact trust-region
// subproblem by safeguarded bisection on lambda -> ||(X^T X + lambda I)^{-1} X^T y||.
inline LinearPredictor fit_constrained_ls(const Dataset& data, double b) {
    if (!(b > 0.0)) throw std::invalid_argument("fit_constrained_ls: b must be positive");
    const detail::SymEig eig(data.covariates.transpose() * data.covariates);
    const auto tr = detail::trust_region_solve(eig, data.covariates.transpose() * data.responses, b);
    return LinearPredictor{tr.weights, PredictorMeta{tr.active, tr.multiplier}};
}

// The adversarial ERM selector of the coupon-collector construction: when an
// unobserved basis direction exists, return b*e_j for the smallest such j
// (zero empirical loss, maximal population risk among solutions); otherwise
// fall back to the default constrained fit.
inline LinearPredictor adversarial_erm_select(const Dataset& data, double b) {
    for (int i = 0; i < data.n(); ++i) {
        if (data.responses[i] != 0.0) {
            throw NonZeroResponses("adversarial_erm_select: all responses must be zero");
        }
    }
    for (int j = 0; j < data.dim(); ++j) {
        bool unobserved = true;
        for (int i = 0; i < data.n(); ++i) {
            if (data.covariates(i, j) != 0.0) { unobserved = false; break; }
        }
        if (unobserved) {
            Eigen::VectorXd w = Eigen::VectorXd::Zero(data.dim());
            w[j] = b;
            return LinearPredictor{std::move(w), PredictorMeta{}};
        }
    }
    return fit_constrained_ls(data, b);
}

// Ridge: (lambda I + X^T X)^{-1} X^T y. The stability guarantee needs
// lambda >= r^2; warn once (not an error) when the caller goes below it.
inline LinearPredictor fit_ridge(const Dataset& data, double lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("fit_ridge: lambda must be positive");
    if (std::isfinite(data.r) && lambda < data.r * data.r) {
        static std::atomic<bool> warned{false};
        if (!warned.exchange(true)) {
            std::cerr << "lsqgap: warning: ridge lambda < r^2; stability bound does not apply\n";
        }
    }
    const SpdSolveContext ctx(SymMatrix(data.covariates.transpose() * data.covariates), lambda);
    return LinearPredictor{ctx.solve(data.covariates.transpose() * data.responses), PredictorMeta{}};
}

// lambda* = d m^2 / b, the tuned VAW regularization.
inline double lambda_star(int d, double m, double b) {
    if (!(b > 0.0)) throw std::invalid_argument("lambda_star: b must be positive");
    return d * m * m / b;
}

// VAW forecaster with a cached ridge factorization of lambda I + X^T X; each
// prediction is one Sherman-Morrison update away:
//   f(x) = x^T (lambda I + X^T X + xx^T)^{-1} X^T y = <x, g> / (1 + <x, u>).
class VawPredictor {
public:
    VawPredictor(const Dataset& train, double lambda)
        : lambda_(lambda),
          eig_(train.covariates.transpose() * train.covariates),
          g_(eig_.shifted_solve(train.covariates.transpose() * train.responses, lambda)) {
        if (!(lambda > 0.0)) throw std::invalid_argument("VawPredictor: lambda must be positive");
    }

    double predict(const Eigen::VectorXd& x) const {
        return x.dot(g_) / (1.0 + eig_.shifted_quadform(x, lambda_));
    }

private:
    double lambda_;
    detail::SymEig eig_;
    Eigen::VectorXd g_;
};

inline double vaw_predict(const Dataset& train, double lambda, const Eigen::VectorXd& x) {
    return VawPredictor(train, lambda).predict(x);
}

// Online-to-batch VAW: the value at x is the average over j = 0..n-1 of the
// VAW prediction trained on the prefix data[0..j). Prediction averaging keeps
// the batch predictor deterministic. O(n d^2) per query; nothing beyond the
// running inverse is cached, so memory stays O(d^2) for any n.
class VawBatchPredictor {
public:
    VawBatchPredictor(Dataset train, double lambda) : train_(std::move(train)), lambda_(lambda) {
        if (!(lambda > 0.0)) throw std::invalid_argument("VawBatchPredictor: lambda must be positive");
    }

    const Dataset& train() const { return train_; }
    double lambda() const { return lambda_; }

    double predict(const Eigen::VectorXd& x) const {
        Eigen::VectorXd single;
        predict_many(x.transpose(), single);
        return single[0];
    }

    // points: N x d. One sweep over prefixes serves all queries.
    void predict_many(const Eigen::MatrixXd& points, Eigen::VectorXd& out) const {
        const int d = train_.dim();
        const int n = train_.n();
        const auto N = points.rows();
        out = Eigen::VectorXd::Zero(N);
        if (n == 0) return;
        Eigen::MatrixXd minv = Eigen::MatrixXd::Identity(d, d) / lambda_;
        Eigen::VectorXd t = Eigen::VectorXd::Zero(d);
        Eigen::MatrixXd pm;
        for (int j = 0; j < n; ++j) {
            pm.noalias() = points * minv;
            const Eigen::VectorXd a = pm * t;
            const Eigen::ArrayXd h = (pm.array() * points.array()).rowwise().sum();
            out.array() += a.array() / (1.0 + h);
            const Eigen::VectorXd xj = train_.covariates.row(j).transpose();
            const Eigen::VectorXd u = minv * xj;
            minv.noalias() -= (u * u.transpose()) / (1.0 + xj.dot(u));
            t.noalias() += train_.responses[j] * xj;
        }
        out /= double(n);
    }

private:
    Dataset train_;
    double lambda_;
};

// Forster-Warmuth predictor: the lambda = 0 VAW prediction (Moore-Penrose
// inverse of the sample second moment) reweighted by (1 - h_x). A query with
// any component outside the span of the training covariates has h_x = 1
// exactly and predicts 0.
class ForsterWarmuthPredictor {
public:
    explicit ForsterWarmuthPredictor(const Dataset& train)
        : dim_(train.dim()),
          eig_(train.covariates.transpose() * train.covariates),
          base_weights_(eig_.pinv_solve(train.covariates.transpose() * train.responses)),
          gram_pinv_(eig_.pinv()) {}

    double predict(const Eigen::VectorXd& x) const {
        const double xn2 = x.squaredNorm();
        if (xn2 == 0.0) return 0.0;
        if (eig_.out_of_range_sq(x) > kRangeRelTol * kRangeRelTol * xn2) return 0.0;
        const double h0 = eig_.pinv_quadform(x);
        const double q = x.dot(base_weights_);
        return q / ((1.0 + h0) * (1.0 + h0));
    }

    int dim() const { return dim_; }
    bool gram_invertible() const { return eig_.rank() == dim_; }
    // Min-norm least squares weights (X^T X)^dagger X^T y.
    const Eigen::VectorXd& base_weights() const { return base_weights_; }
    const Eigen::MatrixXd& gram_pinv() const { return gram_pinv_; }

private:
    int dim_;
    detail::SymEig eig_;
    Eigen::VectorXd base_weights_;
    Eigen::MatrixXd gram_pinv_;
};

inline double fw_predict(const Dataset& train, const Eigen::VectorXd& x) {
    return ForsterWarmuthPredictor(train).predict(x);
}

// Ridge leave-one-out residual, both ways: direct refit without sample i, and
// the full-fit shortcut (y_i - <w, x_i>)/(1 - h_i). The two are equal for all
// inputs; returning both makes the equality testable.
inline std::pair<double, double> ridge_loo_residual(const Dataset& data, double lambda, int i) {
    if (!(lambda > 0.0)) throw std::invalid_argument("ridge_loo_residual: lambda must be positive");
    if (i < 0 || i >= data.n()) throw std::invalid_argument("ridge_loo_residual: index out of range");
    const Eigen::VectorXd xi = data.covariates.row(i).transpose();

    const Dataset rest = data.without_row(i);
    double direct;
    if (rest.n() == 0) {
        direct = data.responses[i];  // empty refit predicts 0
    } else {
        direct = data.responses[i] - fit_ridge(rest, lambda).predict(xi);
    }

    const SpdSolveContext full(SymMatrix(data.covariates.transpose() * data.covariates), lambda);
    const double h = full.quadform_inverse(xi);
    if (1.0 - h <= kDowndateTol) {
        throw DegenerateDowndate("ridge_loo_residual: leverage too close to 1");
    }
    const Eigen::VectorXd w_full = full.solve(data.covariates.transpose() * data.responses);
    const double shortcut = (data.responses[i] - w_full.dot(xi)) / (1.0 - h);
    return {direct, shortcut};
}

}  // namespace lsqgap
