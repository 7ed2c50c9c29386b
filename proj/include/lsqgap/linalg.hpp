#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <utility>

#include "lsqgap/errors.hpp"

namespace lsqgap {

// Relative eigenvalue cutoff below which a direction is treated as null by
// every pseudoinverse path.
inline constexpr double kPinvRelCutoff = 1e-10;
// spd_solve singularity test at shift = 0.
inline constexpr double kSingularRelTol = 1e-12;
// Downdate rejection threshold on h = x^T M^-1 x.
inline constexpr double kDowndateTol = 1e-10;
// Relative tolerance deciding whether a query lies in the range of a Gram
// matrix (pointwise leverage / Forster-Warmuth paths).
inline constexpr double kRangeRelTol = 1e-8;

// Dense symmetric matrix; re-symmetrized as (M + M^T)/2 on every construction
// so roundoff never accumulates asymmetry.
class SymMatrix {
public:
    explicit SymMatrix(Eigen::MatrixXd m) : mat_(std::move(m)) {
        if (mat_.rows() < 1 || mat_.rows() != mat_.cols()) {
            throw std::invalid_argument("SymMatrix: need square matrix with dim >= 1");
        }
        mat_ = ((mat_ + mat_.transpose()) * 0.5).eval();
    }

    static SymMatrix Zero(int dim) { return SymMatrix(Eigen::MatrixXd::Zero(dim, dim)); }
    static SymMatrix Identity(int dim) { return SymMatrix(Eigen::MatrixXd::Identity(dim, dim)); }

    int dim() const { return static_cast<int>(mat_.rows()); }
    double operator()(int i, int j) const { return mat_(i, j); }
    const Eigen::MatrixXd& mat() const { return mat_; }

private:
    Eigen::MatrixXd mat_;
};

namespace detail {

// The single factorization backend: symmetric eigendecomposition. Shifted
// solves, pseudoinverse solves and rank decisions all come out of it.
class SymEig {
public:
    explicit SymEig(const Eigen::MatrixXd& m) : solver_(m) {
        if (solver_.info() != Eigen::Success) {
            throw SingularSystem("SymEig: eigendecomposition failed");
        }
        max_abs_ = 0.0;
        for (int i = 0; i < eigenvalues().size(); ++i) {
            max_abs_ = std::max(max_abs_, std::abs(eigenvalues()[i]));
        }
        cutoff_ = kPinvRelCutoff * max_abs_;
    }

    const Eigen::VectorXd& eigenvalues() const { return solver_.eigenvalues(); }
    const Eigen::MatrixXd& eigenvectors() const { return solver_.eigenvectors(); }
    double cutoff() const { return cutoff_; }

    int rank() const {
        int r = 0;
        for (int i = 0; i < eigenvalues().size(); ++i) {
            if (eigenvalues()[i] > cutoff_) ++r;
        }
        return r;
    }

    bool numerically_singular() const {
        const double lmax = eigenvalues().maxCoeff();
        const double lmin = eigenvalues().minCoeff();
        return lmax <= 0.0 || lmin < kSingularRelTol * lmax;
    }

    // (M + shift I)^{-1} rhs; caller guarantees positivity of every lambda+shift.
    Eigen::VectorXd shifted_solve(const Eigen::VectorXd& rhs, double shift) const {
        Eigen::VectorXd z = eigenvectors().transpose() * rhs;
        for (int i = 0; i < z.size(); ++i) z[i] /= (eigenvalues()[i] + shift);
        return eigenvectors() * z;
    }

    double shifted_quadform(const Eigen::VectorXd& x, double shift) const {
        Eigen::VectorXd z = eigenvectors().transpose() * x;
        double q = 0.0;
        for (int i = 0; i < z.size(); ++i) q += z[i] * z[i] / (eigenvalues()[i] + shift);
        return q;
    }

    Eigen::VectorXd pinv_solve(const Eigen::VectorXd& rhs) const {
        Eigen::VectorXd z = eigenvectors().transpose() * rhs;
        for (int i = 0; i < z.size(); ++i) {
            z[i] = eigenvalues()[i] > cutoff_ ? z[i] / eigenvalues()[i] : 0.0;
        }
        return eigenvectors() * z;
    }

    double pinv_quadform(const Eigen::VectorXd& x) const {
        Eigen::VectorXd z = eigenvectors().transpose() * x;
        double q = 0.0;
        for (int i = 0; i < z.size(); ++i) {
            if (eigenvalues()[i] > cutoff_) q += z[i] * z[i] / eigenvalues()[i];
        }
        return q;
    }

    Eigen::MatrixXd pinv() const {
        const int d = static_cast<int>(eigenvalues().size());
        Eigen::VectorXd w(d);
        for (int i = 0; i < d; ++i) {
            w[i] = eigenvalues()[i] > cutoff_ ? 1.0 / eigenvalues()[i] : 0.0;
        }
        return eigenvectors() * w.asDiagonal() * eigenvectors().transpose();
    }

    // Squared norm of the component of x outside the numerical range, summed
    // over null directions directly (a difference of squared norms would
    // cancel catastrophically when x lies in the range).
    double out_of_range_sq(const Eigen::VectorXd& x) const {
        Eigen::VectorXd z = eigenvectors().transpose() * x;
        double out = 0.0;
        for (int i = 0; i < z.size(); ++i) {
            if (eigenvalues()[i] <= cutoff_) out += z[i] * z[i];
        }
        return out;
    }

private:
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver_;
    double max_abs_ = 0.0;
    double cutoff_ = 0.0;
};

struct TrustRegionResult {
    Eigen::VectorXd weights;
    double multiplier = 0.0;  // KKT multiplier of the ball constraint
    bool active = false;
};

// Exact minimizer of w^T Q w - 2 c^T w over ||w|| <= b, given the
// eigendecomposition of the PSD matrix Q. Interior solve is the min-norm
// pseudoinverse solution; boundary solve bisects the strictly decreasing map
// lambda -> ||(Q + lambda I)^{-1} c||.
inline TrustRegionResult trust_region_solve(const SymEig& eig, const Eigen::VectorXd& c, double b) {
    const int d = static_cast<int>(c.size());
    TrustRegionResult out;
    if (b <= 0.0) {
        out.weights = Eigen::VectorXd::Zero(d);
        out.active = true;
        return out;
    }
    Eigen::VectorXd z = eig.eigenvectors().transpose() * c;
    // Null directions carry only roundoff of c; drop them from both paths.
    for (int i = 0; i < d; ++i) {
        if (eig.eigenvalues()[i] <= eig.cutoff()) z[i] = 0.0;
    }
    const auto norm_at = [&](double lambda) {
        double s = 0.0;
        for (int i = 0; i < d; ++i) {
            if (z[i] == 0.0) continue;
            const double w = z[i] / (std::max(eig.eigenvalues()[i], 0.0) + lambda);
            s += w * w;
        }
        return std::sqrt(s);
    };
    const auto weights_at = [&](double lambda) {
        Eigen::VectorXd w = z;
        for (int i = 0; i < d; ++i) {
            if (w[i] != 0.0) w[i] /= (std::max(eig.eigenvalues()[i], 0.0) + lambda);
        }
        return (eig.eigenvectors() * w).eval();
    };
    // Interior candidate: min-norm solution.
    Eigen::VectorXd w0 = z;
    for (int i = 0; i < d; ++i) {
        if (w0[i] != 0.0) w0[i] /= eig.eigenvalues()[i];
    }
    w0 = eig.eigenvectors() * w0;
    if (w0.norm() <= b) {
        out.weights = w0;
        return out;
    }
    // Bracket, then bisect.
    double lo = 0.0;
    double hi = 1.0;
    while (norm_at(hi) >= b) hi *= 2.0;
    double lambda = hi;
    for (int it = 0; it < 200; ++it) {
        lambda = 0.5 * (lo + hi);
        const double nrm = norm_at(lambda);
        if (std::abs(nrm - b) <= 1e-11 * b) break;
        if (nrm > b) {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if (hi - lo <= 1e-12 * std::max(1.0, lo)) { lambda = 0.5 * (lo + hi); break; }
    }
    out.weights = weights_at(lambda);
    out.multiplier = lambda;
    out.active = true;
    return out;
}

}  // namespace detail

// Shifted SPD solve context over a fixed base matrix.
class SpdSolveContext {
public:
    SpdSolveContext(SymMatrix base, double shift)
        : base_(std::move(base)), shift_(shift), eig_(base_.mat()) {}

    const SymMatrix& base() const { return base_; }
    double shift() const { return shift_; }
    const detail::SymEig& factorization() const { return eig_; }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
        check_solvable();
        return eig_.shifted_solve(rhs, shift_);
    }

    // x^T (base + shift I)^{-1} x.
    double quadform_inverse(const Eigen::VectorXd& x) const {
        check_solvable();
        return eig_.shifted_quadform(x, shift_);
    }

private:
    void check_solvable() const {
        if (shift_ == 0.0 && eig_.numerically_singular()) {
            throw SingularSystem("spd_solve: base is numerically singular and shift = 0");
        }
    }

    SymMatrix base_;
    double shift_;
    detail::SymEig eig_;
};

inline Eigen::VectorXd spd_solve(const SpdSolveContext& ctx, const Eigen::VectorXd& rhs) {
    return ctx.solve(rhs);
}

// Minimum-Euclidean-norm minimizer of ||Xw - y||^2.
inline Eigen::VectorXd min_norm_solve(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const detail::SymEig eig(X.transpose() * X);
    return eig.pinv_solve(X.transpose() * y);
}

// (M - xx^T)^{-1} from M^{-1} by the Sherman-Morrison formula.
inline SymMatrix sherman_morrison_downdate(const SymMatrix& inv, const Eigen::VectorXd& x) {
    const Eigen::VectorXd u = inv.mat() * x;
    const double h = x.dot(u);
    if (h >= 1.0 - kDowndateTol) {
        throw DegenerateDowndate("sherman_morrison_downdate: x^T M^-1 x >= 1 - 1e-10");
    }
    return SymMatrix(inv.mat() + (u * u.transpose()) / (1.0 - h));
}

struct LeverageVector {
    Eigen::VectorXd values;  // each in [0, 1]
};

// values[j] = X_j^T (shift I + X^T X)^{-1} X_j, pseudoinverse when shift = 0.
inline LeverageVector leverage_scores(const Eigen::MatrixXd& X, double shift) {
    if (shift < 0.0) throw std::invalid_argument("leverage_scores: shift must be nonnegative");
    const int d = static_cast<int>(X.cols());
    const detail::SymEig eig(X.transpose() * X);
    Eigen::VectorXd w(d);
    for (int i = 0; i < d; ++i) {
        const double lam = eig.eigenvalues()[i];
        if (shift > 0.0) {
            w[i] = 1.0 / (lam + shift);
        } else {
            w[i] = lam > eig.cutoff() ? 1.0 / lam : 0.0;
        }
    }
    const Eigen::MatrixXd B = X * eig.eigenvectors();
    LeverageVector out;
    out.values = (B.array().square().rowwise() * w.transpose().array()).rowwise().sum();
    for (int j = 0; j < out.values.size(); ++j) {
        out.values[j] = std::min(1.0, std::max(0.0, out.values[j]));
    }
    return out;
}

// h_x = x^T (sum_i X_i X_i^T + xx^T)^dagger x: leverage of a query point with
// itself included in the Gram matrix. Equals 1 exactly when x has a component
// outside the span of the training covariates.
inline double pointwise_leverage(const Eigen::MatrixXd& Xtrain, const Eigen::VectorXd& x) {
    const double xn2 = x.squaredNorm();
    if (xn2 == 0.0) return 0.0;
    const detail::SymEig eig(Xtrain.transpose() * Xtrain);
    if (eig.out_of_range_sq(x) > kRangeRelTol * kRangeRelTol * xn2) return 1.0;
    const double h0 = eig.pinv_quadform(x);
    return h0 / (1.0 + h0);
}

}  // namespace lsqgap
