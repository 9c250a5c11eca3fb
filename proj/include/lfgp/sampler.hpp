#pragma once

// Gibbs sampler for the latent factor Gaussian process model
//
//   Y_i(t) = F_i(t) B + e_i(t),   e ~ N(0, sigma2 I)
//   F_ij(.) ~ GP(0, k(.; theta_j)) independently over trials i and factors j
//   B_.c | sigma2 ~ N(0, sigma2 v I),  sigma2 ~ IG(a0, b0),  theta_j ~ Gamma
//
// Factor paths are drawn one factor at a time from their exact Gaussian
// conditional using the Kronecker identity in kron.hpp; (B, sigma2) come from
// the Normal-Inverse-Gamma conjugate posterior; each theta_j takes one
// random-walk Metropolis step on the log scale.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lfgp/error.hpp"
#include "lfgp/gp_kernels.hpp"
#include "lfgp/kron.hpp"
#include "lfgp/random.hpp"
#include "lfgp/spd_geometry.hpp"
#include "lfgp/sw_estimator.hpp"

namespace lfgp {

struct McmcSettings {
    int n_draws = 2000;
    int n_burn = 500;
    int thin = 10;
    std::uint64_t seed = 1;
    double proposal_sd = 0.3;
};

struct ModelConfig {
    int factors = 2;
    KernelFamily kernel = KernelFamily::SquaredExponential;
    LengthScalePrior ls_prior = LengthScalePrior::with_mode(10.0);
    double loading_prior_var = 1.0;
    double noise_shape = 1.0;   // a0 of IG(a0, b0)
    double noise_rate = 0.01;   // b0
    double horseshoe_global_scale = 0.1;
    bool center = true;         // remove per-column mean of Y before fitting
    McmcSettings mcmc;

    void validate() const {
        if (factors < 1) throw Error(ErrorCode::ConfigError, "factor count must be >= 1");
        if (mcmc.n_draws < 1 || mcmc.n_burn < 0 || mcmc.n_burn >= mcmc.n_draws) {
            throw Error(ErrorCode::ConfigError, "need 0 <= n_burn < n_draws");
        }
        if (mcmc.thin < 1) throw Error(ErrorCode::ConfigError, "thin must be >= 1");
        if (!(loading_prior_var > 0) || !(noise_shape > 0) || !(noise_rate > 0) || !(horseshoe_global_scale > 0) ||
            !(ls_prior.shape > 0) || !(ls_prior.rate > 0) || !(mcmc.proposal_sd >= 0)) {
            throw Error(ErrorCode::ConfigError, "prior parameters must be positive");
        }
    }
};

struct ModelState {
    std::vector<Eigen::MatrixXd> factors;  // per trial, T_w x r
    Eigen::MatrixXd loadings;              // r x q
    double sigma2 = 1.0;
    Eigen::VectorXd theta;                 // per-factor length scales
    Eigen::VectorXd lambda;                // horseshoe local scales of the last factor, empty if none

    [[nodiscard]] Eigen::Index factor_count() const { return loadings.rows(); }
};

struct ChainDraws {
    std::vector<ModelState> states;
    std::vector<double> log_posts;
    Eigen::VectorXd accept_rate_theta;
    Eigen::VectorXd grid;
    Eigen::RowVectorXd offset;  // added back to F B on reconstruction
    KernelFamily kernel = KernelFamily::SquaredExponential;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t size() const { return states.size(); }
    [[nodiscard]] bool empty() const { return states.empty(); }
};

// ---------------------------------------------------------------------------
// Factor conditional

struct FactorConditional {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

namespace detail {

inline Eigen::MatrixXd reassemble(const Spectral& s) {
    return s.vectors * s.values.asDiagonal() * s.vectors.transpose();
}

inline Spectral loading_outer(const Eigen::VectorXd& b, double sigma2) {
    return Spectral::of(b * b.transpose() / sigma2);
}

inline void check_kernel_psd(const Spectral& k) {
    const double min_eig = k.values.minCoeff();
    if (min_eig < -1e-6) {
        throw Error(ErrorCode::NumericalBreakdown,
                    "factor conditional covariance lost positive semi-definiteness, min eigenvalue " +
                        std::to_string(min_eig));
    }
}

}  // namespace detail

/// Conditional moments of one factor path given the T_w x q residual that
/// excludes the other factors. Used as a reference by the tests; the sampler
/// draws through draw_factor_path.
[[nodiscard]] inline FactorConditional factor_conditional(const Eigen::MatrixXd& residual, const Eigen::VectorXd& b,
                                                          double sigma2, const Spectral& k_time) {
    detail::check_kernel_psd(k_time);
    const Spectral a = detail::loading_outer(b, sigma2);
    const Eigen::MatrixXd k = detail::reassemble(k_time);
    const Eigen::Index m = k.rows();

    FactorConditional out;
    out.mean = k * (kron_solve_matrix(a, k_time, residual) * b) / sigma2;
    Eigen::MatrixXd reduction(m, m);
    for (Eigen::Index t = 0; t < m; ++t) {
        const Eigen::MatrixXd rhs = k.col(t) * b.transpose();
        reduction.col(t) = k * (kron_solve_matrix(a, k_time, rhs) * b) / sigma2;
    }
    out.cov = k - reduction;
    out.cov = 0.5 * (out.cov + out.cov.transpose());
    return out;
}

/// Exact draw from the factor conditional: perturb a prior draw and correct it
/// with one Kronecker solve.
[[nodiscard]] inline Eigen::VectorXd draw_factor_path(const Eigen::MatrixXd& residual, const Eigen::VectorXd& b,
                                                      double sigma2, const Spectral& k_time, const Spectral& a,
                                                      Rng& rng) {
    const Eigen::Index m = k_time.size();
    const Eigen::VectorXd root = k_time.values.cwiseMax(0.0).cwiseSqrt();
    const Eigen::VectorXd prior_draw = k_time.vectors * root.cwiseProduct(draw_normal_vector(rng, m));
    const Eigen::MatrixXd noise = std::sqrt(sigma2) * draw_normal_matrix(rng, m, residual.cols());
    const Eigen::MatrixXd gap = residual - prior_draw * b.transpose() - noise;
    const Eigen::VectorXd wb = kron_solve_matrix(a, k_time, gap) * b;
    const Eigen::VectorXd k_wb = k_time.vectors * k_time.values.cwiseProduct(k_time.vectors.transpose() * wb);
    return prior_draw + k_wb / sigma2;
}

/// One ascending sweep over factors; returns the updated per-trial factor paths.
[[nodiscard]] inline std::vector<Eigen::MatrixXd> sample_factors(const LogCovSeries& y, const ModelState& state,
                                                                 const std::vector<Spectral>& k_time, Rng& rng) {
    const Eigen::Index r = state.factor_count();
    if (static_cast<Eigen::Index>(k_time.size()) != r || static_cast<Eigen::Index>(state.factors.size()) != y.n() ||
        state.loadings.cols() != y.q()) {
        throw Error(ErrorCode::DimMismatch, "sample_factors: state does not match data dimensions");
    }
    std::vector<Eigen::MatrixXd> f = state.factors;
    std::vector<Eigen::MatrixXd> fitted(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) fitted[i] = f[i] * state.loadings;

    for (Eigen::Index j = 0; j < r; ++j) {
        detail::check_kernel_psd(k_time[static_cast<std::size_t>(j)]);
        const Eigen::VectorXd b = state.loadings.row(j).transpose();
        const Spectral a = detail::loading_outer(b, state.sigma2);
        for (std::size_t i = 0; i < f.size(); ++i) {
            const Eigen::MatrixXd residual = y.values[i] - fitted[i] + f[i].col(j) * b.transpose();
            const Eigen::VectorXd path =
                draw_factor_path(residual, b, state.sigma2, k_time[static_cast<std::size_t>(j)], a, rng);
            fitted[i] += (path - f[i].col(j)) * b.transpose();
            f[i].col(j) = path;
        }
    }
    return f;
}

// ---------------------------------------------------------------------------
// Loadings and noise

/// Normal-Inverse-Gamma posterior: sigma2 ~ IG(shape, scale) and, for every
/// column c, B_.c | sigma2 ~ N(mean_.c, sigma2 precision^{-1}).
struct LoadingPosterior {
    Eigen::MatrixXd precision;
    Eigen::MatrixXd mean;
    double shape = 0.0;
    double scale = 0.0;
};

[[nodiscard]] inline LoadingPosterior loadings_noise_posterior(const LogCovSeries& y,
                                                               const std::vector<Eigen::MatrixXd>& f,
                                                               double loading_prior_var, double noise_shape,
                                                               double noise_rate) {
    if (f.empty() || static_cast<Eigen::Index>(f.size()) != y.n()) {
        throw Error(ErrorCode::DimMismatch, "loadings posterior: factor and data trial counts differ");
    }
    const Eigen::Index r = f.front().cols();
    Eigen::MatrixXd ftf = Eigen::MatrixXd::Zero(r, r);
    Eigen::MatrixXd fty = Eigen::MatrixXd::Zero(r, y.q());
    double yty = 0.0;
    double count = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (!f[i].allFinite()) throw Error(ErrorCode::NumericalBreakdown, "non-finite factor values");
        ftf.noalias() += f[i].transpose() * f[i];
        fty.noalias() += f[i].transpose() * y.values[i];
        yty += y.values[i].squaredNorm();
        count += static_cast<double>(y.values[i].rows());
    }
    LoadingPosterior post;
    post.precision = ftf;
    post.precision.diagonal().array() += 1.0 / loading_prior_var;
    Eigen::LLT<Eigen::MatrixXd> llt(post.precision);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularDesign, "F'F + prior precision is singular");
    post.mean = llt.solve(fty);
    const double explained = (post.mean.transpose() * post.precision * post.mean).trace();
    post.shape = noise_shape + 0.5 * count * static_cast<double>(y.q());
    post.scale = noise_rate + 0.5 * std::max(yty - explained, 0.0);
    return post;
}

struct LoadingsNoise {
    Eigen::MatrixXd loadings;
    double sigma2 = 1.0;
};

[[nodiscard]] inline LoadingsNoise sample_loadings_noise(const LogCovSeries& y, const std::vector<Eigen::MatrixXd>& f,
                                                         const ModelConfig& cfg, Rng& rng) {
    const LoadingPosterior post =
        loadings_noise_posterior(y, f, cfg.loading_prior_var, cfg.noise_shape, cfg.noise_rate);
    LoadingsNoise out;
    out.sigma2 = draw_inv_gamma(rng, post.shape, post.scale);
    Eigen::LLT<Eigen::MatrixXd> llt(post.precision);
    const Eigen::MatrixXd z = draw_normal_matrix(rng, post.mean.rows(), post.mean.cols());
    out.loadings = post.mean + std::sqrt(out.sigma2) * llt.matrixU().solve(z);
    return out;
}

// ---------------------------------------------------------------------------
// Length scales

/// Sum over trials of log N(path_i | 0, K).
[[nodiscard]] inline double gp_log_density(const std::vector<Eigen::VectorXd>& paths, const Eigen::MatrixXd& k) {
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::NumericalBreakdown, "GP covariance is not positive definite");
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const auto m = static_cast<double>(k.rows());
    double total = 0.0;
    for (const auto& path : paths) {
        const Eigen::VectorXd white = llt.matrixL().solve(path);
        total += -0.5 * white.squaredNorm() - 0.5 * log_det - 0.5 * m * std::log(2.0 * std::numbers::pi);
    }
    return total;
}

/// Log of the length-scale full conditional on the log scale (includes the Jacobian).
[[nodiscard]] inline double lengthscale_log_target(const std::vector<Eigen::VectorXd>& paths, double theta,
                                                   const Eigen::VectorXd& grid, KernelFamily family,
                                                   const LengthScalePrior& prior) {
    return gp_log_density(paths, gram_matrix({family, theta}, grid)) + log_prior_density(prior, theta) +
           std::log(theta);
}

struct LengthScaleStep {
    double theta = 1.0;
    bool accepted = false;
};

[[nodiscard]] inline LengthScaleStep sample_lengthscale(const std::vector<Eigen::VectorXd>& paths, double theta,
                                                        const Eigen::VectorXd& grid, KernelFamily family,
                                                        const LengthScalePrior& prior, double proposal_sd, Rng& rng) {
    if (!(theta > 0.0)) throw Error(ErrorCode::NonPositiveTheta, "length scale must be positive");
    const double step = proposal_sd * draw_normal(rng);
    const double u = draw_uniform(rng);
    if (proposal_sd == 0.0) return {theta, true};
    const double proposal = theta * std::exp(step);
    const double log_ratio = lengthscale_log_target(paths, proposal, grid, family, prior) -
                             lengthscale_log_target(paths, theta, grid, family, prior);
    if (std::log(u) < log_ratio) return {proposal, true};
    return {theta, false};
}

[[nodiscard]] inline std::vector<Eigen::VectorXd> factor_paths(const std::vector<Eigen::MatrixXd>& f, Eigen::Index j) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(f.size());
    for (const auto& fi : f) out.emplace_back(fi.col(j));
    return out;
}

// ---------------------------------------------------------------------------
// Whole-model helpers

[[nodiscard]] inline double log_inv_gamma_density(double x, double shape, double scale) {
    return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

[[nodiscard]] inline double log_posterior(const LogCovSeries& y, const ModelState& state, const ModelConfig& cfg,
                                          const Eigen::VectorXd& grid) {
    const double log2pi = std::log(2.0 * std::numbers::pi);
    double lp = 0.0;
    double count = 0.0;
    double sse = 0.0;
    for (std::size_t i = 0; i < state.factors.size(); ++i) {
        sse += (y.values[i] - state.factors[i] * state.loadings).squaredNorm();
        count += static_cast<double>(y.values[i].size());
    }
    lp += -0.5 * sse / state.sigma2 - 0.5 * count * (std::log(state.sigma2) + log2pi);
    for (Eigen::Index j = 0; j < state.factor_count(); ++j) {
        lp += gp_log_density(factor_paths(state.factors, j), gram_matrix({cfg.kernel, state.theta(j)}, grid));
        lp += log_prior_density(cfg.ls_prior, state.theta(j));
    }
    const double bvar = cfg.loading_prior_var * state.sigma2;
    lp += -0.5 * state.loadings.squaredNorm() / bvar -
          0.5 * static_cast<double>(state.loadings.size()) * (std::log(bvar) + log2pi);
    lp += log_inv_gamma_density(state.sigma2, cfg.noise_shape, cfg.noise_rate);
    return lp;
}

/// Warm start: top-r singular directions of the stacked data.
[[nodiscard]] inline ModelState initial_state(const LogCovSeries& y, const ModelConfig& cfg) {
    const Eigen::Index n = y.n();
    const Eigen::Index tw = y.windows();
    const Eigen::Index q = y.q();
    const Eigen::Index r = cfg.factors;
    const Eigen::Index rows = n * tw;
    if (r > std::min(rows, q)) throw Error(ErrorCode::ConfigError, "more factors than the data can support");
    Eigen::MatrixXd stacked(rows, q);
    for (Eigen::Index i = 0; i < n; ++i) stacked.middleRows(i * tw, tw) = y.values[static_cast<std::size_t>(i)];

    Eigen::BDCSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double root_n = std::sqrt(static_cast<double>(rows));
    const Eigen::MatrixXd scores = svd.matrixU().leftCols(r) * root_n;
    ModelState s;
    s.loadings = svd.singularValues().head(r).asDiagonal() * svd.matrixV().leftCols(r).transpose() / root_n;
    s.factors.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) s.factors.emplace_back(scores.middleRows(i * tw, tw));
    const double total = stacked.squaredNorm() / static_cast<double>(stacked.size());
    const double resid = (stacked - scores * s.loadings).squaredNorm() / static_cast<double>(stacked.size());
    s.sigma2 = std::max(resid, 1e-6 * total + 1e-12);
    const double start = cfg.ls_prior.shape > 1.0 ? cfg.ls_prior.mode() : cfg.ls_prior.shape / cfg.ls_prior.rate;
    s.theta = Eigen::VectorXd::Constant(r, start);
    return s;
}

[[nodiscard]] inline Eigen::RowVectorXd column_means(const LogCovSeries& y) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(y.q());
    double count = 0.0;
    for (const auto& v : y.values) {
        mean += v.colwise().sum();
        count += static_cast<double>(v.rows());
    }
    return mean / count;
}

[[nodiscard]] inline LogCovSeries subtract_offset(const LogCovSeries& y, const Eigen::RowVectorXd& offset) {
    LogCovSeries out = y;
    for (auto& v : out.values) v.rowwise() -= offset;
    return out;
}

inline void check_series(const LogCovSeries& y) {
    if (y.n() < 1 || y.windows() < 1 || y.q() < 1) throw Error(ErrorCode::DimMismatch, "empty log-covariance series");
    if (y.time_index.size() != y.windows()) throw Error(ErrorCode::DimMismatch, "time index length mismatch");
    for (const auto& v : y.values) {
        if (v.rows() != y.windows() || v.cols() != y.q()) throw Error(ErrorCode::RaggedTrials, "ragged log-covariance series");
        if (!v.allFinite()) throw Error(ErrorCode::ParseError, "log-covariance series has non-finite values");
    }
}

/// Sequential Gibbs sampler owning one chain's state and the cached
/// spectral decompositions of each factor's temporal Gram matrix.
class GibbsSampler {
public:
    /// y must already have any offset removed.
    GibbsSampler(LogCovSeries y, ModelConfig cfg, ModelState init)
        : y_(std::move(y)), cfg_(std::move(cfg)), state_(std::move(init)) {
        check_series(y_);
        cached_theta_.assign(static_cast<std::size_t>(state_.factor_count()), -1.0);
        k_time_.resize(static_cast<std::size_t>(state_.factor_count()));
        accepted_ = Eigen::VectorXd::Zero(state_.factor_count());
    }

    void sample_factors(Rng& rng) {
        refresh_kernels();
        state_.factors = lfgp::sample_factors(y_, state_, k_time_, rng);
    }

    void sample_loadings_noise(Rng& rng) {
        LoadingsNoise ln = lfgp::sample_loadings_noise(y_, state_.factors, cfg_, rng);
        state_.loadings = std::move(ln.loadings);
        state_.sigma2 = ln.sigma2;
    }

    void sample_lengthscales(Rng& rng) {
        for (Eigen::Index j = 0; j < state_.factor_count(); ++j) {
            const LengthScaleStep step =
                sample_lengthscale(factor_paths(state_.factors, j), state_.theta(j), y_.time_index, cfg_.kernel,
                                   cfg_.ls_prior, cfg_.mcmc.proposal_sd, rng);
            state_.theta(j) = step.theta;
            if (step.accepted) accepted_(j) += 1.0;
        }
        ++mh_steps_;
    }

    void sweep(Rng& rng) {
        sample_factors(rng);
        sample_loadings_noise(rng);
        sample_lengthscales(rng);
    }

    [[nodiscard]] double log_posterior() const { return lfgp::log_posterior(y_, state_, cfg_, y_.time_index); }

    [[nodiscard]] const ModelState& state() const { return state_; }
    [[nodiscard]] const LogCovSeries& data() const { return y_; }
    void set_data(LogCovSeries y) {
        y_ = std::move(y);
        check_series(y_);
    }

    [[nodiscard]] Eigen::VectorXd acceptance_rates() const {
        return mh_steps_ == 0 ? accepted_ : Eigen::VectorXd(accepted_ / static_cast<double>(mh_steps_));
    }

private:
    void refresh_kernels() {
        for (Eigen::Index j = 0; j < state_.factor_count(); ++j) {
            auto idx = static_cast<std::size_t>(j);
            if (cached_theta_[idx] != state_.theta(j)) {
                k_time_[idx] = Spectral::of(gram_matrix({cfg_.kernel, state_.theta(j)}, y_.time_index));
                cached_theta_[idx] = state_.theta(j);
            }
        }
    }

    LogCovSeries y_;
    ModelConfig cfg_;
    ModelState state_;
    std::vector<Spectral> k_time_;
    std::vector<double> cached_theta_;
    Eigen::VectorXd accepted_;
    long mh_steps_ = 0;
};

[[nodiscard]] inline ChainDraws gibbs_run(const LogCovSeries& y, const ModelConfig& cfg) {
    cfg.validate();
    check_series(y);
    ChainDraws draws;
    draws.grid = y.time_index;
    draws.kernel = cfg.kernel;
    draws.seed = cfg.mcmc.seed;
    draws.offset = cfg.center ? column_means(y) : Eigen::RowVectorXd::Zero(y.q());
    LogCovSeries centered = subtract_offset(y, draws.offset);

    Rng rng(cfg.mcmc.seed);
    ModelState init = initial_state(centered, cfg);
    GibbsSampler sampler(std::move(centered), cfg, std::move(init));
    const int kept = (cfg.mcmc.n_draws - cfg.mcmc.n_burn) / cfg.mcmc.thin;
    draws.states.reserve(static_cast<std::size_t>(kept));
    for (int it = 0; it < cfg.mcmc.n_draws; ++it) {
        try {
            sampler.sweep(rng);
            const int since_burn = it - cfg.mcmc.n_burn + 1;
            if (since_burn > 0 && since_burn % cfg.mcmc.thin == 0) {
                draws.states.push_back(sampler.state());
                draws.log_posts.push_back(sampler.log_posterior());
            }
        } catch (const Error& e) {
            throw Error(e.code(), "iteration " + std::to_string(it) + ": " + e.what());
        }
    }
    draws.accept_rate_theta = sampler.acceptance_rates();
    return draws;
}

// ---------------------------------------------------------------------------
// Posterior summaries

/// Elementwise posterior median of offset + F_i B, one T_w x q matrix per trial.
[[nodiscard]] inline std::vector<Eigen::MatrixXd> posterior_median_log_cov(const ChainDraws& draws) {
    if (draws.empty()) throw Error(ErrorCode::EmptyChain, "no draws to summarize");
    const std::size_t d = draws.size();
    const std::size_t n = draws.states.front().factors.size();
    std::vector<Eigen::MatrixXd> out;
    out.reserve(n);
    std::vector<double> buf(d);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Eigen::MatrixXd> recon(d);
        for (std::size_t k = 0; k < d; ++k) recon[k] = draws.states[k].factors[i] * draws.states[k].loadings;
        Eigen::MatrixXd med(recon.front().rows(), recon.front().cols());
        for (Eigen::Index c = 0; c < med.cols(); ++c) {
            for (Eigen::Index t = 0; t < med.rows(); ++t) {
                for (std::size_t k = 0; k < d; ++k) buf[k] = recon[k](t, c);
                const auto mid = buf.begin() + static_cast<std::ptrdiff_t>(d / 2);
                std::nth_element(buf.begin(), mid, buf.end());
                double value = *mid;
                if (d % 2 == 0) value = 0.5 * (value + *std::max_element(buf.begin(), mid));
                med(t, c) = value + (draws.offset.size() == med.cols() ? draws.offset(c) : 0.0);
            }
        }
        out.push_back(std::move(med));
    }
    return out;
}

/// Per-element posterior sample variance of F_i B.
[[nodiscard]] inline std::vector<Eigen::MatrixXd> posterior_variance_log_cov(const ChainDraws& draws) {
    if (draws.empty()) throw Error(ErrorCode::EmptyChain, "no draws to summarize");
    const auto d = static_cast<double>(draws.size());
    const std::size_t n = draws.states.front().factors.size();
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::MatrixXd sum, sq;
        for (const auto& s : draws.states) {
            const Eigen::MatrixXd r = s.factors[i] * s.loadings;
            if (sum.size() == 0) {
                sum = Eigen::MatrixXd::Zero(r.rows(), r.cols());
                sq = sum;
            }
            sum += r;
            sq += r.cwiseProduct(r);
        }
        const Eigen::MatrixXd mean = sum / d;
        Eigen::MatrixXd var = (sq / d - mean.cwiseProduct(mean)) * (draws.size() > 1 ? d / (d - 1.0) : 0.0);
        out.push_back(var.cwiseMax(0.0));
    }
    return out;
}

/// Posterior-median covariance process per trial: exp(unvec(median log-covariance)).
[[nodiscard]] inline std::vector<CovarianceProcess> reconstruct_covariance(const ChainDraws& draws) {
    const std::vector<Eigen::MatrixXd> med = posterior_median_log_cov(draws);
    std::vector<CovarianceProcess> out;
    out.reserve(med.size());
    for (const auto& m : med) out.push_back(covariance_from_log_rows(m));
    return out;
}

/// 1 - ||Y - median(F B)||^2 / ||Y||^2 on the centered scale.
[[nodiscard]] inline double variance_explained(const LogCovSeries& y, const ChainDraws& draws) {
    const std::vector<Eigen::MatrixXd> med = posterior_median_log_cov(draws);
    double resid = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < med.size(); ++i) {
        resid += (y.values[i] - med[i]).squaredNorm();
        Eigen::MatrixXd centered = y.values[i];
        if (draws.offset.size() == centered.cols()) centered.rowwise() -= draws.offset;
        total += centered.squaredNorm();
    }
    return total > 0.0 ? 1.0 - resid / total : 0.0;
}

/// Model covariance Cov(Y_j(s), Y_j2(s + lag)) for fixed B, sigma2 and theta:
/// sum_k B_kj B_kj2 k(lag; theta_k) + sigma2 [j == j2].
[[nodiscard]] inline double prior_predictive_cov(const Eigen::MatrixXd& loadings, double sigma2,
                                                 const Eigen::VectorXd& theta, KernelFamily family, double lag,
                                                 Eigen::Index j, Eigen::Index j2) {
    double c = 0.0;
    for (Eigen::Index k = 0; k < loadings.rows(); ++k) {
        c += loadings(k, j) * loadings(k, j2) * kernel_at_distance(family, theta(k), lag);
    }
    if (j == j2 && lag == 0.0) c += sigma2;
    return c;
}

struct ModelSample {
    LogCovSeries y;                        // signal + noise
    std::vector<Eigen::MatrixXd> signal;   // F_i B
    std::vector<Eigen::MatrixXd> factors;  // F_i
};

/// Forward simulation of n trials from the model with fixed parameters.
[[nodiscard]] inline ModelSample simulate_from_model(const Eigen::MatrixXd& loadings, double sigma2,
                                                     const Eigen::VectorXd& theta, KernelFamily family,
                                                     const Eigen::VectorXd& grid, Eigen::Index n, Rng& rng) {
    const Eigen::Index r = loadings.rows();
    const Eigen::Index m = grid.size();
    std::vector<Eigen::MatrixXd> chol;
    for (Eigen::Index k = 0; k < r; ++k) {
        Eigen::LLT<Eigen::MatrixXd> llt(gram_matrix({family, theta(k)}, grid));
        if (llt.info() != Eigen::Success) throw Error(ErrorCode::NumericalBreakdown, "Gram matrix not positive definite");
        chol.emplace_back(llt.matrixL());
    }
    ModelSample out;
    out.y.time_index = grid;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::MatrixXd f(m, r);
        for (Eigen::Index k = 0; k < r; ++k) f.col(k) = chol[static_cast<std::size_t>(k)] * draw_normal_vector(rng, m);
        Eigen::MatrixXd signal = f * loadings;
        out.y.values.push_back(signal + std::sqrt(sigma2) * draw_normal_matrix(rng, m, loadings.cols()));
        out.signal.push_back(std::move(signal));
        out.factors.push_back(std::move(f));
    }
    return out;
}

}  // namespace lfgp
