#pragma once

// Solves (A (x) S + I) x = v through the spectral decompositions of A and S,
// without forming the qm x qm matrix:
//   (A (x) S + I)^{-1} = (P (x) Q) (I + L_A (x) L_S)^{-1} (P (x) Q)^T
// with A = P L_A P^T and S = Q L_S Q^T. Vectors are stacked column-major
// from an m x q matrix V, i.e. v[a * m + t] = V(t, a).

#include <Eigen/Dense>

#include "lfgp/error.hpp"
#include "lfgp/spd_geometry.hpp"

namespace lfgp {

struct Spectral {
    Eigen::MatrixXd vectors;
    Eigen::VectorXd values;

    [[nodiscard]] static Spectral of(const Eigen::MatrixXd& m) {
        if (!is_symmetric(m, 1e-10)) throw Error(ErrorCode::NotSymmetric, "spectral decomposition of non-symmetric matrix");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
        if (es.info() != Eigen::Success) throw Error(ErrorCode::NumericalBreakdown, "eigendecomposition failed");
        return {es.eigenvectors(), es.eigenvalues()};
    }

    [[nodiscard]] Eigen::Index size() const { return values.size(); }
};

/// Matrix form: returns X (m x q) with vec(X) = (A (x) S + I)^{-1} vec(V).
[[nodiscard]] inline Eigen::MatrixXd kron_solve_matrix(const Spectral& a, const Spectral& s,
                                                       const Eigen::Ref<const Eigen::MatrixXd>& v) {
    if (v.rows() != s.size() || v.cols() != a.size()) {
        throw Error(ErrorCode::DimMismatch, "kron_solve: operand shape does not match the factors");
    }
    // Directions of A with a zero eigenvalue pass through unchanged, so only the
    // active part of the spectrum of A needs the rotation.
    const double amax = a.values.cwiseAbs().maxCoeff();
    std::vector<Eigen::Index> active;
    for (Eigen::Index k = 0; k < a.size(); ++k) {
        if (std::abs(a.values(k)) > 1e-15 * amax) active.push_back(k);
    }
    if (active.empty()) return v;

    const auto na = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd pa(a.size(), na);
    Eigen::VectorXd la(na);
    for (Eigen::Index k = 0; k < na; ++k) {
        pa.col(k) = a.vectors.col(active[static_cast<std::size_t>(k)]);
        la(k) = a.values(active[static_cast<std::size_t>(k)]);
    }
    const Eigen::MatrixXd rotated = s.vectors.transpose() * (v * pa);
    Eigen::MatrixXd correction(rotated.rows(), na);
    for (Eigen::Index k = 0; k < na; ++k) {
        for (Eigen::Index t = 0; t < rotated.rows(); ++t) {
            const double g = 1.0 / (1.0 + la(k) * s.values(t));
            correction(t, k) = (g - 1.0) * rotated(t, k);
        }
    }
    return v + s.vectors * correction * pa.transpose();
}

[[nodiscard]] inline Eigen::VectorXd kron_solve(const Spectral& a, const Spectral& s,
                                                const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (v.size() != a.size() * s.size()) {
        throw Error(ErrorCode::DimMismatch, "kron_solve: vector length must be q * m");
    }
    const Eigen::Map<const Eigen::MatrixXd> vm(v.data(), s.size(), a.size());
    const Eigen::MatrixXd x = kron_solve_matrix(a, s, vm);
    return Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
}

/// (A (x) S + I)^{-1} v for symmetric PSD A (q x q) and S (m x m).
[[nodiscard]] inline Eigen::VectorXd kron_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& s,
                                                const Eigen::Ref<const Eigen::VectorXd>& v) {
    return kron_solve(Spectral::of(a), Spectral::of(s), v);
}

}  // namespace lfgp
