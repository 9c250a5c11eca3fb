#pragma once

// Factor addition with horseshoe-shrunk loadings. A single new GP factor is
// fitted to the residuals Y - median(F B) of an existing chain, with
//   b_c | lambda_c ~ N(0, lambda_c^2 rho^2),   lambda_c ~ C+(0, 1).
// The half-Cauchy is written as lambda^2 | nu ~ IG(1/2, 1/nu),
// nu ~ IG(1/2, 1), which keeps every update a closed-form Gibbs draw.

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "lfgp/error.hpp"
#include "lfgp/gp_kernels.hpp"
#include "lfgp/kron.hpp"
#include "lfgp/random.hpp"
#include "lfgp/sampler.hpp"

namespace lfgp {

struct HorseshoeScales {
    Eigen::VectorXd lambda2;
    Eigen::VectorXd nu;

    static HorseshoeScales ones(Eigen::Index q) {
        return {Eigen::VectorXd::Ones(q), Eigen::VectorXd::Ones(q)};
    }
};

/// One Gibbs pass over (lambda^2, nu). With beta == nullptr the loadings'
/// likelihood is left out and the pass targets the half-Cauchy prior itself.
inline void horseshoe_scale_step(HorseshoeScales& s, const Eigen::VectorXd* beta, double rho, Rng& rng) {
    for (Eigen::Index c = 0; c < s.lambda2.size(); ++c) {
        if (beta != nullptr) {
            const double b = (*beta)(c);
            s.lambda2(c) = draw_inv_gamma(rng, 1.0, 1.0 / s.nu(c) + b * b / (2.0 * rho * rho));
        } else {
            s.lambda2(c) = draw_inv_gamma(rng, 0.5, 1.0 / s.nu(c));
        }
        s.nu(c) = draw_inv_gamma(rng, 1.0, 1.0 + 1.0 / s.lambda2(c));
    }
}

/// Residuals of y against the chain's posterior median reconstruction (centered scale).
[[nodiscard]] inline LogCovSeries chain_residuals(const LogCovSeries& y, const ChainDraws& draws) {
    const std::vector<Eigen::MatrixXd> med = posterior_median_log_cov(draws);
    if (static_cast<Eigen::Index>(med.size()) != y.n()) throw Error(ErrorCode::DimMismatch, "chain and data trial counts differ");
    LogCovSeries r;
    r.time_index = y.time_index;
    for (std::size_t i = 0; i < med.size(); ++i) r.values.push_back(y.values[i] - med[i]);
    return r;
}

/// Fits one extra factor with horseshoe loadings to the residuals of an existing
/// fit and returns the chain of the (r+1)-factor model. Draw k of the result
/// pairs draw k of the input with draw k of the new factor.
[[nodiscard]] inline ChainDraws add_factor_horseshoe(const LogCovSeries& y, const ChainDraws& draws,
                                                     const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    if (draws.empty()) throw Error(ErrorCode::EmptyChain, "add_factor_horseshoe needs an existing fit");
    const LogCovSeries resid = chain_residuals(y, draws);
    check_series(resid);
    const Eigen::Index n = resid.n();
    const Eigen::Index tw = resid.windows();
    const Eigen::Index q = resid.q();
    const double rho = cfg.horseshoe_global_scale;
    const double count = static_cast<double>(n * tw);

    // Warm start from the leading singular direction of the stacked residuals.
    ModelConfig one = cfg;
    one.factors = 1;
    ModelState init = initial_state(resid, one);
    std::vector<Eigen::VectorXd> f;
    for (const auto& fi : init.factors) f.emplace_back(fi.col(0));
    Eigen::VectorXd b = init.loadings.row(0).transpose();
    double sigma2 = init.sigma2;
    double theta = init.theta(0);
    HorseshoeScales scales = HorseshoeScales::ones(q);

    Spectral k_time;
    double cached_theta = -1.0;
    double accepted = 0.0;

    ChainDraws out;
    out.grid = draws.grid;
    out.offset = draws.offset;
    out.kernel = draws.kernel;
    out.seed = draws.seed;

    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (int it = 0; it < cfg.mcmc.n_draws; ++it) {
        try {
            if (cached_theta != theta) {
                k_time = Spectral::of(gram_matrix({cfg.kernel, theta}, resid.time_index));
                cached_theta = theta;
            }
            detail::check_kernel_psd(k_time);
            const Spectral a = detail::loading_outer(b, sigma2);
            for (Eigen::Index i = 0; i < n; ++i) {
                f[static_cast<std::size_t>(i)] =
                    draw_factor_path(resid.values[static_cast<std::size_t>(i)], b, sigma2, k_time, a, rng);
            }

            double ftf = 0.0;
            Eigen::VectorXd fty = Eigen::VectorXd::Zero(q);
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto& fi = f[static_cast<std::size_t>(i)];
                ftf += fi.squaredNorm();
                fty.noalias() += resid.values[static_cast<std::size_t>(i)].transpose() * fi;
            }
            for (Eigen::Index c = 0; c < q; ++c) {
                const double precision = ftf / sigma2 + 1.0 / (scales.lambda2(c) * rho * rho);
                b(c) = fty(c) / sigma2 / precision + draw_normal(rng) / std::sqrt(precision);
            }

            double sse = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                sse += (resid.values[static_cast<std::size_t>(i)] - f[static_cast<std::size_t>(i)] * b.transpose())
                           .squaredNorm();
            }
            sigma2 = draw_inv_gamma(rng, cfg.noise_shape + 0.5 * count * static_cast<double>(q),
                                    cfg.noise_rate + 0.5 * sse);

            horseshoe_scale_step(scales, &b, rho, rng);

            const LengthScaleStep step =
                sample_lengthscale(f, theta, resid.time_index, cfg.kernel, cfg.ls_prior, cfg.mcmc.proposal_sd, rng);
            theta = step.theta;
            if (step.accepted) accepted += 1.0;

            const int since_burn = it - cfg.mcmc.n_burn + 1;
            if (since_burn > 0 && since_burn % cfg.mcmc.thin == 0) {
                const ModelState& base = draws.states[out.states.size() % draws.size()];
                ModelState ext;
                const Eigen::Index r = base.factor_count();
                ext.loadings.resize(r + 1, q);
                ext.loadings.topRows(r) = base.loadings;
                ext.loadings.row(r) = b.transpose();
                ext.factors.reserve(static_cast<std::size_t>(n));
                for (Eigen::Index i = 0; i < n; ++i) {
                    Eigen::MatrixXd fi(tw, r + 1);
                    fi.leftCols(r) = base.factors[static_cast<std::size_t>(i)];
                    fi.col(r) = f[static_cast<std::size_t>(i)];
                    ext.factors.push_back(std::move(fi));
                }
                ext.sigma2 = sigma2;
                ext.theta.resize(r + 1);
                ext.theta.head(r) = base.theta;
                ext.theta(r) = theta;
                ext.lambda = scales.lambda2.cwiseSqrt();
                out.states.push_back(std::move(ext));

                double lp = -0.5 * sse / sigma2 - 0.5 * count * static_cast<double>(q) * (std::log(sigma2) + log2pi);
                lp += gp_log_density(f, gram_matrix({cfg.kernel, theta}, resid.time_index));
                lp += log_prior_density(cfg.ls_prior, theta);
                lp += log_inv_gamma_density(sigma2, cfg.noise_shape, cfg.noise_rate);
                for (Eigen::Index c = 0; c < q; ++c) {
                    const double v = scales.lambda2(c) * rho * rho;
                    lp += -0.5 * b(c) * b(c) / v - 0.5 * (std::log(v) + log2pi);
                }
                out.log_posts.push_back(lp);
            }
        } catch (const Error& e) {
            throw Error(e.code(), "horseshoe iteration " + std::to_string(it) + ": " + e.what());
        }
    }
    Eigen::VectorXd rates(draws.accept_rate_theta.size() + 1);
    rates.head(draws.accept_rate_theta.size()) = draws.accept_rate_theta;
    rates(rates.size() - 1) = accepted / cfg.mcmc.n_draws;
    out.accept_rate_theta = rates;
    return out;
}

}  // namespace lfgp
