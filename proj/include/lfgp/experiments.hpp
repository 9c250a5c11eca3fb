#pragma once

// Synthetic dynamics, ground-truth covariance processes and the two
// benchmark harnesses: posterior contraction over (n, t) cells and the
// SW / SW-PCA / HMM / LFGP reconstruction comparison.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <Eigen/Dense>

#include "lfgp/baselines.hpp"
#include "lfgp/error.hpp"
#include "lfgp/parallel.hpp"
#include "lfgp/random.hpp"
#include "lfgp/sampler.hpp"
#include "lfgp/spd_geometry.hpp"
#include "lfgp/sw_estimator.hpp"

namespace lfgp {

enum class DynamicsKind { SquareWave, PiecewiseLinear, CubicSpline, Constant };

[[nodiscard]] inline DynamicsKind parse_dynamics_kind(const std::string& s) {
    if (s == "square_wave") return DynamicsKind::SquareWave;
    if (s == "piecewise_linear") return DynamicsKind::PiecewiseLinear;
    if (s == "cubic_spline") return DynamicsKind::CubicSpline;
    if (s == "constant") return DynamicsKind::Constant;
    throw Error(ErrorCode::ConfigError, "unknown scenario '" + s + "'");
}

[[nodiscard]] inline std::string dynamics_kind_name(DynamicsKind k) {
    switch (k) {
        case DynamicsKind::SquareWave: return "square_wave";
        case DynamicsKind::PiecewiseLinear: return "piecewise_linear";
        case DynamicsKind::CubicSpline: return "cubic_spline";
        case DynamicsKind::Constant: return "constant";
    }
    return "?";
}

struct DynamicsScenario {
    DynamicsKind kind = DynamicsKind::CubicSpline;
    int r_true = 4;
    int T = 1000;
    int knots = 6;            // change points (square wave), interior knots (linear), control points - 2 (spline)
    double amplitude = 1.0;
    std::vector<int> change_points;       // square wave: fixed switch times shared by every column
    std::vector<double> control_values;   // spline: fixed control values shared by every column

    void validate() const {
        if (r_true < 1) throw Error(ErrorCode::ConfigError, "r_true must be >= 1");
        if (T < 2 * r_true) throw Error(ErrorCode::ConfigError, "T must be at least 2 r_true");
        if (knots < 1) throw Error(ErrorCode::ConfigError, "knots must be >= 1");
        if (!(amplitude > 0.0)) throw Error(ErrorCode::ConfigError, "amplitude must be positive");
        if (kind == DynamicsKind::CubicSpline && !control_values.empty() && control_values.size() < 5) {
            throw Error(ErrorCode::ConfigError, "spline needs at least 5 control values");
        }
    }
};

namespace detail {

inline std::vector<int> random_positions(Rng& rng, int count, int lo, int hi) {
    std::vector<int> pos;
    const int span = hi - lo + 1;
    count = std::min(count, span);
    while (static_cast<int>(pos.size()) < count) {
        const int c = lo + static_cast<int>(draw_uniform(rng) * span);
        if (std::find(pos.begin(), pos.end(), c) == pos.end()) pos.push_back(c);
    }
    std::sort(pos.begin(), pos.end());
    return pos;
}

inline double uniform_pm(Rng& rng, double a) { return a * (2.0 * draw_uniform(rng) - 1.0); }

}  // namespace detail

/// T x r_true latent dynamics.
[[nodiscard]] inline Eigen::MatrixXd gen_dynamics(const DynamicsScenario& sc, Rng& rng) {
    sc.validate();
    const int len = sc.T;
    const double a = sc.amplitude;
    Eigen::MatrixXd u(len, sc.r_true);
    for (int j = 0; j < sc.r_true; ++j) {
        switch (sc.kind) {
            case DynamicsKind::SquareWave: {
                std::vector<int> cps = sc.change_points;
                double level = -a;
                if (cps.empty()) {
                    cps = detail::random_positions(rng, sc.knots, 1, len - 1);
                    level = draw_uniform(rng) < 0.5 ? -a : a;
                }
                std::size_t next = 0;
                for (int t = 0; t < len; ++t) {
                    while (next < cps.size() && cps[next] == t) {
                        level = -level;
                        ++next;
                    }
                    u(t, j) = level;
                }
                break;
            }
            case DynamicsKind::PiecewiseLinear: {
                std::vector<int> knots = detail::random_positions(rng, sc.knots, 1, len - 2);
                knots.insert(knots.begin(), 0);
                knots.push_back(len - 1);
                std::vector<double> vals;
                for (std::size_t k = 0; k < knots.size(); ++k) vals.push_back(detail::uniform_pm(rng, a));
                std::size_t seg = 0;
                for (int t = 0; t < len; ++t) {
                    while (seg + 2 < knots.size() && t > knots[seg + 1]) ++seg;
                    const double w = static_cast<double>(t - knots[seg]) / (knots[seg + 1] - knots[seg]);
                    u(t, j) = (1.0 - w) * vals[seg] + w * vals[seg + 1];
                }
                break;
            }
            case DynamicsKind::CubicSpline: {
                std::vector<double> vals = sc.control_values;
                if (vals.empty()) {
                    const int count = std::max(sc.knots + 2, 5);
                    for (int k = 0; k < count; ++k) vals.push_back(detail::uniform_pm(rng, a));
                }
                const double step = static_cast<double>(len - 1) / static_cast<double>(vals.size() - 1);
                boost::math::interpolators::cardinal_cubic_b_spline<double> spline(vals.data(), vals.size(), 0.0, step);
                for (int t = 0; t < len; ++t) u(t, j) = spline(static_cast<double>(t));
                break;
            }
            case DynamicsKind::Constant: {
                u.col(j).setConstant(detail::uniform_pm(rng, a));
                break;
            }
        }
    }
    return u;
}

struct GroundTruth {
    Eigen::MatrixXd u;        // T x r_true
    Eigen::MatrixXd a;        // r_true x q
    CovarianceProcess k;      // vec_upper(log K(t)) = U(t) A

    [[nodiscard]] Eigen::MatrixXd log_cov() const { return u * a; }
};

struct TruthOptions {
    double max_log_entry = 2.0;
    double max_condition = 1e4;
};

/// A has iid N(0, 1) entries, shrunk (never grown) so every log-covariance
/// entry stays within max_log_entry and every K(t) has condition number at
/// most max_condition.
[[nodiscard]] inline GroundTruth make_ground_truth(const Eigen::MatrixXd& u, Eigen::Index p, Rng& rng,
                                                   const TruthOptions& opts = {}) {
    GroundTruth g;
    g.u = u;
    g.a = draw_normal_matrix(rng, u.cols(), triangular_number(p));
    const Eigen::MatrixXd l = u * g.a;
    double scale = 1.0;
    const double biggest = l.cwiseAbs().maxCoeff();
    if (biggest > 0.0) scale = std::min(scale, opts.max_log_entry / biggest);
    double spread = 0.0;
    for (Eigen::Index t = 0; t < l.rows(); ++t) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(unvec_upper(l.row(t).transpose()), Eigen::EigenvaluesOnly);
        spread = std::max(spread, es.eigenvalues().maxCoeff() - es.eigenvalues().minCoeff());
    }
    if (spread > 0.0) scale = std::min(scale, std::log(opts.max_condition) / spread);
    g.a *= scale;
    g.k = covariance_from_log_rows(u * g.a);
    return g;
}

/// n trials, X(t) ~ N(0, K(t)) independently over t. Time unit is the sample (1 kHz).
[[nodiscard]] inline TrialSet gen_dataset(const CovarianceProcess& k, Eigen::Index n, Rng& rng,
                                          const std::string& label = "sim") {
    if (k.empty()) throw Error(ErrorCode::InvalidArgument, "gen_dataset: empty covariance process");
    std::vector<Eigen::MatrixXd> chol;
    chol.reserve(k.size());
    for (std::size_t t = 0; t < k.size(); ++t) {
        Eigen::LLT<Eigen::MatrixXd> llt(k[t]);
        if (llt.info() != Eigen::Success) {
            throw Error(ErrorCode::NotPositiveDefinite, "K(" + std::to_string(t) + ") is not SPD");
        }
        chol.emplace_back(llt.matrixL());
    }
    const Eigen::Index p = k.front().rows();
    TrialSet set;
    for (Eigen::Index i = 0; i < n; ++i) {
        Trial tr;
        tr.label = label;
        tr.samples.resize(static_cast<Eigen::Index>(k.size()), p);
        for (std::size_t t = 0; t < k.size(); ++t) {
            tr.samples.row(static_cast<Eigen::Index>(t)) = (chol[t] * draw_normal_vector(rng, p)).transpose();
        }
        set.trials.push_back(std::move(tr));
    }
    return set;
}

[[nodiscard]] inline TrialSet gen_dataset(const GroundTruth& truth, Eigen::Index n, Rng& rng) {
    return gen_dataset(truth.k, n, rng);
}

/// Mean over time of the Log-Euclidean distance.
[[nodiscard]] inline double reconstruction_loss(const CovarianceProcess& est, const CovarianceProcess& truth) {
    if (est.size() != truth.size()) {
        throw Error(ErrorCode::DimMismatch, "reconstruction_loss: lengths " + std::to_string(est.size()) + " vs " +
                                                std::to_string(truth.size()));
    }
    if (est.empty()) throw Error(ErrorCode::DimMismatch, "reconstruction_loss: empty processes");
    double sum = 0.0;
    for (std::size_t t = 0; t < est.size(); ++t) sum += log_euclidean_distance(est[t], truth[t]);
    return sum / static_cast<double>(est.size());
}

/// Truth aligned with sliding-window estimates: window starting at s is
/// compared with K(s + L/2), where its taper peaks.
[[nodiscard]] inline CovarianceProcess truth_at_windows(const CovarianceProcess& k, int window_len,
                                                        Eigen::Index windows, Eigen::Index stride = 1) {
    CovarianceProcess out;
    for (Eigen::Index s = 0; s < windows; s += stride) {
        out.push_back(k.at(static_cast<std::size_t>(s + window_len / 2)));
    }
    return out;
}

[[nodiscard]] inline CovarianceProcess every_stride(const CovarianceProcess& k, Eigen::Index stride) {
    CovarianceProcess out;
    for (std::size_t s = 0; s < k.size(); s += static_cast<std::size_t>(stride)) out.push_back(k[s]);
    return out;
}

// ---------------------------------------------------------------------------
// posterior contraction

struct ContractionCell {
    int n = 1;
    int t = 25;
};

struct ContractionSettings {
    ModelConfig model;        // factors and MCMC settings of the fit
    Eigen::Index p = 5;       // q = p(p+1)/2 = 15
    int r_true = 2;
    double sigma2 = 0.5;
    double theta = 0.2;       // generating length scale; the grid spans [0, 1]
    int replicates = 1;
    std::uint64_t seed = 1;
    int threads = 1;

    ContractionSettings() {
        model.factors = 2;
        model.ls_prior = LengthScalePrior::with_mode(0.2, 10.0);
        model.mcmc.n_draws = 2000;
        model.mcmc.n_burn = 500;
        model.mcmc.thin = 10;
    }
};

struct ContractionRow {
    int n = 0;
    int t = 0;
    double mse = 0.0;
    double posterior_variance = 0.0;
    int replicates = 0;
    std::uint64_t seed = 0;
};

namespace detail {

struct CellResult {
    double mse = 0.0;
    double post_var = 0.0;
};

inline CellResult contraction_cell(const ContractionCell& cell, const ContractionSettings& st, int rep,
                                   std::size_t cell_index) {
    // loadings are shared by every cell of a replicate
    Rng b_rng(derive_seed(st.seed, static_cast<std::uint64_t>(rep), 0));
    const Eigen::MatrixXd b = draw_normal_matrix(b_rng, st.r_true, triangular_number(st.p));
    Rng rng(derive_seed(st.seed, static_cast<std::uint64_t>(rep), cell_index + 1));
    const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(cell.t, 0.0, 1.0);
    const ModelSample sample = simulate_from_model(b, st.sigma2, Eigen::VectorXd::Constant(st.r_true, st.theta),
                                                   st.model.kernel, grid, cell.n, rng);
    ModelConfig cfg = st.model;
    cfg.mcmc.seed = derive_seed(st.seed, static_cast<std::uint64_t>(rep), 1000 + cell_index);
    const ChainDraws draws = gibbs_run(sample.y, cfg);
    const auto med = posterior_median_log_cov(draws);
    const auto var = posterior_variance_log_cov(draws);
    CellResult res;
    double count = 0.0;
    for (std::size_t i = 0; i < med.size(); ++i) {
        res.mse += (med[i] - sample.signal[i]).squaredNorm();
        res.post_var += var[i].sum();
        count += static_cast<double>(med[i].size());
    }
    res.mse /= count;
    res.post_var /= count;
    return res;
}

}  // namespace detail

/// Per cell: 2-factor data from the model on a t-point grid over [0, 1],
/// fit, MSE of the posterior-median F B against the noise-free signal and
/// the pooled mean of per-element posterior variances, averaged over replicates.
[[nodiscard]] inline std::vector<ContractionRow> contraction_experiment(const std::vector<ContractionCell>& cells,
                                                                        const ContractionSettings& st) {
    if (cells.empty()) throw Error(ErrorCode::InvalidArgument, "contraction_experiment: no cells");
    if (st.replicates < 1) throw Error(ErrorCode::ConfigError, "replicates must be >= 1");
    const std::size_t jobs = cells.size() * static_cast<std::size_t>(st.replicates);
    std::vector<detail::CellResult> results(jobs);
    parallel_for(jobs, st.threads, [&](std::size_t k) {
        const std::size_t c = k / static_cast<std::size_t>(st.replicates);
        const int rep = static_cast<int>(k % static_cast<std::size_t>(st.replicates));
        results[k] = detail::contraction_cell(cells[c], st, rep, c);
    });
    std::vector<ContractionRow> rows;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        ContractionRow row;
        row.n = cells[c].n;
        row.t = cells[c].t;
        row.replicates = st.replicates;
        row.seed = st.seed;
        for (int rep = 0; rep < st.replicates; ++rep) {
            const auto& r = results[c * static_cast<std::size_t>(st.replicates) + static_cast<std::size_t>(rep)];
            row.mse += r.mse / st.replicates;
            row.posterior_variance += r.post_var / st.replicates;
        }
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// method comparison

struct ComparisonSettings {
    Eigen::Index p = 10;
    int n_trials = 1;
    TaperSpec taper{50, 0.5};
    int pca_k = 4;
    int hmm_max_states = 8;
    HmmOptions hmm;
    ModelConfig model;
    int stride = 10;          // LFGP grid and evaluation points: every stride-th window
    std::uint64_t seed = 1;
    int threads = 1;
    std::vector<std::string> methods{"SW", "SW-PCA", "HMM", "LFGP"};

    ComparisonSettings() {
        hmm.restarts = 2;
        model.factors = 4;
        model.ls_prior = LengthScalePrior::with_mode(40.0, 10.0);
        model.mcmc.n_draws = 2000;
        model.mcmc.n_burn = 500;
        model.mcmc.thin = 10;
    }
};

struct ComparisonRow {
    std::string scenario;
    std::string method;
    int replicate = 0;
    double loss = 0.0;
    std::uint64_t seed = 0;
};

struct ComparisonSummary {
    std::string scenario;
    std::string method;
    double median = 0.0;
    double sd = 0.0;
    int replicates = 0;
};

struct ComparisonResult {
    std::vector<ComparisonRow> rows;
    std::vector<ComparisonSummary> summaries;

    [[nodiscard]] const ComparisonSummary& summary(const std::string& scenario, const std::string& method) const {
        for (const auto& s : summaries)
            if (s.scenario == scenario && s.method == method) return s;
        throw Error(ErrorCode::InvalidArgument, "no summary for " + scenario + "/" + method);
    }
};

/// Losses of every method on one synthetic data set, in settings.methods order.
[[nodiscard]] inline std::vector<double> compare_methods_once(const DynamicsScenario& sc,
                                                              const ComparisonSettings& st, std::uint64_t seed) {
    Rng rng(seed);
    const Eigen::MatrixXd u = gen_dynamics(sc, rng);
    const GroundTruth truth = make_ground_truth(u, st.p, rng);
    const TrialSet data = gen_dataset(truth, st.n_trials, rng);
    const LogCovSeries y = to_log_cov_series(data, st.taper);
    const Eigen::Index stride = std::max(st.stride, 1);
    const CovarianceProcess target = truth_at_windows(truth.k, st.taper.window_len, y.windows(), stride);

    auto mean_loss = [&](const std::vector<CovarianceProcess>& est) {
        double s = 0.0;
        for (const auto& e : est) s += reconstruction_loss(every_stride(e, stride), target);
        return s / static_cast<double>(est.size());
    };

    std::vector<double> losses;
    for (const auto& method : st.methods) {
        if (method == "SW") {
            std::vector<CovarianceProcess> est;
            for (const auto& v : y.values) est.push_back(covariance_from_log_rows(v));
            losses.push_back(mean_loss(est));
        } else if (method == "SW-PCA") {
            losses.push_back(mean_loss(sw_pca_reconstruct(y, sw_pca_fit(y, st.pca_k))));
        } else if (method == "HMM") {
            Rng hmm_rng(derive_seed(seed, 7));
            const HmmFit fit = hmm_fit_largest(y.values, st.hmm_max_states, st.hmm, hmm_rng);
            losses.push_back(mean_loss(hmm_reconstruct(fit.model, y)));
        } else if (method == "LFGP") {
            ModelConfig cfg = st.model;
            cfg.mcmc.seed = derive_seed(seed, 11);
            const ChainDraws draws = gibbs_run(y.subsample(stride), cfg);
            double s = 0.0;
            for (const auto& e : reconstruct_covariance(draws)) s += reconstruction_loss(e, target);
            losses.push_back(s / static_cast<double>(y.n()));
        } else {
            throw Error(ErrorCode::ConfigError, "unknown method '" + method + "'");
        }
    }
    return losses;
}

[[nodiscard]] inline ComparisonResult comparison_experiment(const std::vector<DynamicsScenario>& scenarios, int n_reps,
                                                            const ComparisonSettings& st) {
    if (scenarios.empty()) throw Error(ErrorCode::InvalidArgument, "comparison_experiment: no scenarios");
    if (n_reps < 1) throw Error(ErrorCode::ConfigError, "n_reps must be >= 1");
    const std::size_t jobs = scenarios.size() * static_cast<std::size_t>(n_reps);
    std::vector<std::vector<double>> losses(jobs);
    std::vector<std::uint64_t> seeds(jobs);
    for (std::size_t k = 0; k < jobs; ++k) {
        seeds[k] = derive_seed(st.seed, k / static_cast<std::size_t>(n_reps), k % static_cast<std::size_t>(n_reps));
    }
    parallel_for(jobs, st.threads, [&](std::size_t k) {
        losses[k] = compare_methods_once(scenarios[k / static_cast<std::size_t>(n_reps)], st, seeds[k]);
    });

    ComparisonResult res;
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
        const std::string name = dynamics_kind_name(scenarios[s].kind);
        for (std::size_t m = 0; m < st.methods.size(); ++m) {
            std::vector<double> vals;
            for (int rep = 0; rep < n_reps; ++rep) {
                const std::size_t k = s * static_cast<std::size_t>(n_reps) + static_cast<std::size_t>(rep);
                res.rows.push_back({name, st.methods[m], rep, losses[k][m], seeds[k]});
                vals.push_back(losses[k][m]);
            }
            ComparisonSummary sum;
            sum.scenario = name;
            sum.method = st.methods[m];
            sum.replicates = n_reps;
            std::vector<double> sorted = vals;
            std::sort(sorted.begin(), sorted.end());
            const std::size_t h = sorted.size() / 2;
            sum.median = sorted.size() % 2 == 1 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            double ss = 0.0;
            for (double v : vals) ss += (v - mean) * (v - mean);
            sum.sd = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
            res.summaries.push_back(sum);
        }
    }
    return res;
}

}  // namespace lfgp
