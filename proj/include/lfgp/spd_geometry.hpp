#pragma once

// Log-Euclidean maps between symmetric positive definite matrices and their
// vectorized matrix logarithms. Every map goes through a symmetric
// eigendecomposition, so results are exact up to the eigensolver's accuracy.

#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "lfgp/error.hpp"

namespace lfgp {

using SymMatrix = Eigen::MatrixXd;
using SpdMatrix = Eigen::MatrixXd;
using LogCovVector = Eigen::VectorXd;

/// Time-indexed sequence of p x p SPD matrices.
using CovarianceProcess = std::vector<SpdMatrix>;

inline constexpr double kSymmetryTolerance = 1e-12;

[[nodiscard]] inline Eigen::Index triangular_number(Eigen::Index p) { return p * (p + 1) / 2; }

/// Returns p such that p(p+1)/2 == q, or -1 when q is not triangular.
[[nodiscard]] inline Eigen::Index triangular_root(Eigen::Index q) {
    if (q < 1) return -1;
    auto p = static_cast<Eigen::Index>(std::llround((std::sqrt(8.0 * static_cast<double>(q) + 1.0) - 1.0) / 2.0));
    return triangular_number(p) == q ? p : -1;
}

[[nodiscard]] inline bool is_symmetric(const Eigen::MatrixXd& m, double rel_tol = kSymmetryTolerance) {
    if (m.rows() != m.cols()) return false;
    if (m.size() == 0) return true;
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

namespace detail {

inline Eigen::MatrixXd checked_symmetrize(const Eigen::MatrixXd& m, const char* op) {
    if (!is_symmetric(m)) {
        throw Error(ErrorCode::NotSymmetric, std::string(op) + ": input is not symmetric");
    }
    return 0.5 * (m + m.transpose());
}

template <class Fn>
Eigen::MatrixXd spectral_map(const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>& es, Fn&& fn) {
    const Eigen::VectorXd mapped = es.eigenvalues().unaryExpr(fn);
    return es.eigenvectors() * mapped.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Matrix logarithm of an SPD matrix. Throws NotPositiveDefinite instead of
/// clamping small eigenvalues.
[[nodiscard]] inline SymMatrix matrix_log(const SpdMatrix& m) {
    const Eigen::MatrixXd sym = detail::checked_symmetrize(m, "matrix_log");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) {
        throw Error(ErrorCode::NumericalBreakdown, "matrix_log: eigendecomposition failed");
    }
    const double min_eig = es.eigenvalues().minCoeff();
    if (!(min_eig > 0.0)) {
        std::ostringstream os;
        os << "matrix_log: smallest eigenvalue " << min_eig << " is not positive";
        throw Error(ErrorCode::NotPositiveDefinite, os.str());
    }
    return detail::spectral_map(es, [](double x) { return std::log(x); });
}

[[nodiscard]] inline SpdMatrix matrix_exp(const SymMatrix& m) {
    const Eigen::MatrixXd sym = detail::checked_symmetrize(m, "matrix_exp");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) {
        throw Error(ErrorCode::NumericalBreakdown, "matrix_exp: eigendecomposition failed");
    }
    return detail::spectral_map(es, [](double x) { return std::exp(x); });
}

/// Upper triangle in row-major order: (0,0),(0,1),...,(0,p-1),(1,1),...,(p-1,p-1).
[[nodiscard]] inline LogCovVector vec_upper(const SymMatrix& m) {
    const Eigen::Index p = m.rows();
    LogCovVector v(triangular_number(p));
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = i; j < p; ++j) v(k++) = m(i, j);
    return v;
}

[[nodiscard]] inline SymMatrix unvec_upper(const Eigen::Ref<const Eigen::VectorXd>& v) {
    const Eigen::Index p = triangular_root(v.size());
    if (p < 0) {
        throw Error(ErrorCode::BadLength,
                    "unvec_upper: length " + std::to_string(v.size()) + " is not a triangular number");
    }
    SymMatrix m(p, p);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = i; j < p; ++j) {
            m(i, j) = v(k);
            m(j, i) = v(k);
            ++k;
        }
    return m;
}

[[nodiscard]] inline double log_euclidean_distance(const SpdMatrix& x1, const SpdMatrix& x2) {
    if (x1.rows() != x2.rows() || x1.cols() != x2.cols()) {
        throw Error(ErrorCode::DimMismatch, "log_euclidean_distance: matrices differ in size");
    }
    return (matrix_log(x1) - matrix_log(x2)).norm();
}

}  // namespace lfgp
