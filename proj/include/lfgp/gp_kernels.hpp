#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "lfgp/error.hpp"

namespace lfgp {

enum class KernelFamily { SquaredExponential, Matern52 };

inline KernelFamily parse_kernel_family(const std::string& name) {
    if (name == "se" || name == "squared_exponential") return KernelFamily::SquaredExponential;
    if (name == "matern52" || name == "matern-5/2" || name == "matern") return KernelFamily::Matern52;
    throw Error(ErrorCode::ConfigError, "unknown kernel family '" + name + "'");
}

inline const char* kernel_family_name(KernelFamily f) {
    return f == KernelFamily::SquaredExponential ? "se" : "matern52";
}

/// Stationary kernel with unit variance; length_scale is in grid (window-index) units.
struct KernelSpec {
    KernelFamily family = KernelFamily::SquaredExponential;
    double length_scale = 1.0;
};

/// Gamma(shape, rate) prior on a length scale.
struct LengthScalePrior {
    double shape = 10.0;
    double rate = 0.1;

    /// Prior whose mode (shape - 1) / rate sits at the given location.
    static LengthScalePrior with_mode(double mode, double shape = 10.0) {
        return {shape, (shape - 1.0) / mode};
    }
    [[nodiscard]] double mode() const { return shape > 1.0 ? (shape - 1.0) / rate : 0.0; }
};

inline constexpr double kGramJitter = 1e-8;

[[nodiscard]] inline double kernel_at_distance(KernelFamily family, double length_scale, double distance) {
    const double d = std::abs(distance) / length_scale;
    switch (family) {
    case KernelFamily::SquaredExponential:
        return std::exp(-0.5 * d * d);
    case KernelFamily::Matern52: {
        const double s = std::sqrt(5.0) * d;
        return (1.0 + s + s * s / 3.0) * std::exp(-s);
    }
    }
    return 0.0;
}

[[nodiscard]] inline double kernel_eval(const KernelSpec& spec, double s, double t) {
    return kernel_at_distance(spec.family, spec.length_scale, s - t);
}

/// Gram matrix over a strictly increasing grid, with kGramJitter added to the diagonal.
[[nodiscard]] inline Eigen::MatrixXd gram_matrix(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& grid,
                                                 double jitter = kGramJitter) {
    const Eigen::Index n = grid.size();
    for (Eigen::Index i = 1; i < n; ++i) {
        if (!(grid(i) > grid(i - 1))) throw Error(ErrorCode::GridNotSorted, "gram_matrix: grid must be strictly increasing");
    }
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        k(j, j) = 1.0 + jitter;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            const double v = kernel_eval(spec, grid(i), grid(j));
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

[[nodiscard]] inline double log_prior_density(const LengthScalePrior& prior, double theta) {
    if (!(theta > 0.0)) throw Error(ErrorCode::NonPositiveTheta, "length scale must be positive");
    return prior.shape * std::log(prior.rate) - std::lgamma(prior.shape) + (prior.shape - 1.0) * std::log(theta) -
           prior.rate * theta;
}

}  // namespace lfgp
