#pragma once

// Reference estimators: sliding-window PCA and a Gaussian-emission hidden
// Markov model fitted by Baum-Welch.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lfgp/error.hpp"
#include "lfgp/parallel.hpp"
#include "lfgp/random.hpp"
#include "lfgp/spd_geometry.hpp"
#include "lfgp/sw_estimator.hpp"

namespace lfgp {

// ---------------------------------------------------------------------------
// SW-PCA

struct PcaBasis {
    Eigen::Index k = 0;
    Eigen::MatrixXd components;   // k x q, orthonormal rows
    Eigen::RowVectorXd mean;      // length q
    Eigen::VectorXd eigenvalues;  // all q, descending

    /// Fraction of total variance carried by the first k components.
    [[nodiscard]] double explained_variance() const {
        const double total = eigenvalues.sum();
        return total > 0.0 ? eigenvalues.head(k).sum() / total : 1.0;
    }
};

namespace detail {

inline Eigen::MatrixXd stack_rows(const std::vector<Eigen::MatrixXd>& blocks) {
    Eigen::Index rows = 0;
    for (const auto& b : blocks) rows += b.rows();
    Eigen::MatrixXd out(rows, blocks.empty() ? 0 : blocks.front().cols());
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        out.middleRows(at, b.rows()) = b;
        at += b.rows();
    }
    return out;
}

}  // namespace detail

[[nodiscard]] inline PcaBasis sw_pca_fit(const LogCovSeries& y, Eigen::Index k) {
    if (y.values.empty()) throw Error(ErrorCode::InvalidArgument, "sw_pca_fit: no trials");
    const Eigen::Index q = y.q();
    if (k < 0) throw Error(ErrorCode::InvalidArgument, "sw_pca_fit: negative component count");
    if (k > q) {
        throw Error(ErrorCode::KTooLarge, "k = " + std::to_string(k) + " exceeds q = " + std::to_string(q));
    }
    Eigen::MatrixXd x = detail::stack_rows(y.values);
    PcaBasis basis;
    basis.k = k;
    basis.mean = x.colwise().mean();
    x.rowwise() -= basis.mean;
    const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(x.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    // ascending from Eigen; flip to descending
    basis.eigenvalues = es.eigenvalues().reverse().cwiseMax(0.0);
    basis.components = es.eigenvectors().rowwise().reverse().leftCols(k).transpose();
    return basis;
}

/// Project-and-reconstruct on the log scale, one T_w x q matrix per trial.
[[nodiscard]] inline std::vector<Eigen::MatrixXd> sw_pca_project(const LogCovSeries& y, const PcaBasis& basis) {
    std::vector<Eigen::MatrixXd> out;
    out.reserve(y.values.size());
    for (const auto& v : y.values) {
        if (v.cols() != basis.mean.size()) {
            throw Error(ErrorCode::DimMismatch, "basis fitted on q = " + std::to_string(basis.mean.size()) +
                                                    ", data has q = " + std::to_string(v.cols()));
        }
        Eigen::MatrixXd centered = v.rowwise() - basis.mean;
        Eigen::MatrixXd rec = centered * basis.components.transpose() * basis.components;
        rec.rowwise() += basis.mean;
        out.push_back(std::move(rec));
    }
    return out;
}

[[nodiscard]] inline std::vector<CovarianceProcess> sw_pca_reconstruct(const LogCovSeries& y, const PcaBasis& basis) {
    std::vector<CovarianceProcess> out;
    for (const auto& rec : sw_pca_project(y, basis)) out.push_back(covariance_from_log_rows(rec));
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian HMM

struct HmmModel {
    Eigen::VectorXd initial;
    Eigen::MatrixXd transition;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covs;
    bool zero_mean = false;

    [[nodiscard]] int states() const { return static_cast<int>(initial.size()); }
    [[nodiscard]] Eigen::Index dim() const { return covs.empty() ? 0 : covs.front().rows(); }
};

struct HmmOptions {
    int max_iter = 500;
    double tol = 1e-6;
    int restarts = 5;
    bool zero_mean = false;  // emissions N(0, Sigma_s), used for raw signals
    double ridge = 1e-6;     // diagonal loading relative to trace/d of the pooled covariance
    int threads = 1;
};

struct HmmFit {
    HmmModel model;
    double log_likelihood = 0.0;
    std::vector<double> trace;  // penalized EM objective per iteration
    int iterations = 0;
    bool converged = false;
};

using Sequences = std::vector<Eigen::MatrixXd>;

namespace detail {

inline const double kLog2Pi = std::log(2.0 * std::numbers::pi);

/// T x S emission log-densities.
inline Eigen::MatrixXd emission_log_density(const HmmModel& m, const Eigen::MatrixXd& x) {
    const Eigen::Index d = x.cols();
    Eigen::MatrixXd out(x.rows(), m.states());
    for (int s = 0; s < m.states(); ++s) {
        Eigen::LLT<Eigen::MatrixXd> llt(m.covs[static_cast<std::size_t>(s)]);
        if (llt.info() != Eigen::Success) {
            throw Error(ErrorCode::NotPositiveDefinite, "emission covariance of state " + std::to_string(s));
        }
        Eigen::MatrixXd diff = x.transpose();
        if (!m.zero_mean) diff.colwise() -= m.means[static_cast<std::size_t>(s)];
        llt.matrixL().solveInPlace(diff);
        const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        out.col(s) = (-0.5 * (diff.colwise().squaredNorm().array() + logdet + static_cast<double>(d) * kLog2Pi))
                         .matrix()
                         .transpose();
    }
    return out;
}

struct Posteriors {
    Eigen::MatrixXd gamma;   // T x S
    Eigen::MatrixXd xi_sum;  // S x S
    double log_likelihood = 0.0;
};

inline Posteriors forward_backward(const HmmModel& m, const Eigen::MatrixXd& logb) {
    const Eigen::Index len = logb.rows();
    const Eigen::Index ns = logb.cols();
    Eigen::VectorXd shift = logb.rowwise().maxCoeff();
    Eigen::MatrixXd b = (logb.colwise() - shift).array().exp().matrix();
    Eigen::MatrixXd alpha(len, ns);
    Eigen::VectorXd scale(len);
    alpha.row(0) = m.initial.transpose().cwiseProduct(b.row(0));
    for (Eigen::Index t = 0;; ++t) {
        scale(t) = alpha.row(t).sum();
        if (!(scale(t) > 0.0)) throw Error(ErrorCode::NumericalBreakdown, "forward pass underflow");
        alpha.row(t) /= scale(t);
        if (t + 1 == len) break;
        alpha.row(t + 1) = (alpha.row(t) * m.transition).cwiseProduct(b.row(t + 1));
    }
    Eigen::MatrixXd beta(len, ns);
    beta.row(len - 1).setOnes();
    for (Eigen::Index t = len - 2; t >= 0; --t) {
        beta.row(t) = (m.transition * b.row(t + 1).cwiseProduct(beta.row(t + 1)).transpose()).transpose() / scale(t + 1);
    }
    Posteriors post;
    post.gamma = alpha.cwiseProduct(beta);
    for (Eigen::Index t = 0; t < len; ++t) post.gamma.row(t) /= post.gamma.row(t).sum();
    post.xi_sum = Eigen::MatrixXd::Zero(ns, ns);
    for (Eigen::Index t = 0; t + 1 < len; ++t) {
        const Eigen::RowVectorXd right = b.row(t + 1).cwiseProduct(beta.row(t + 1)) / scale(t + 1);
        post.xi_sum.noalias() += (alpha.row(t).transpose() * right).cwiseProduct(m.transition);
    }
    post.log_likelihood = scale.array().log().sum() + shift.sum();
    return post;
}

inline Eigen::MatrixXd pooled_covariance(const Sequences& seqs, bool zero_mean) {
    const Eigen::MatrixXd x = stack_rows(seqs);
    Eigen::MatrixXd c = x;
    if (!zero_mean) c.rowwise() -= x.colwise().mean();
    return c.transpose() * c / static_cast<double>(x.rows());
}

/// Random start: k-means++ seeded means (or random block assignment for
/// zero-mean emissions), pooled covariances, sticky transitions.
inline HmmModel random_start(const Sequences& seqs, int ns, bool zero_mean, const Eigen::MatrixXd& pooled,
                             double ridge_abs, Rng& rng) {
    const Eigen::MatrixXd x = stack_rows(seqs);
    const Eigen::Index d = x.cols();
    HmmModel m;
    m.zero_mean = zero_mean;
    m.initial = Eigen::VectorXd::Constant(ns, 1.0 / ns);
    m.transition = Eigen::MatrixXd::Constant(ns, ns, ns > 1 ? 0.1 / (ns - 1) : 1.0);
    if (ns > 1) m.transition.diagonal().setConstant(0.9);
    const Eigen::MatrixXd ridge = ridge_abs * Eigen::MatrixXd::Identity(d, d);
    if (!zero_mean) {
        std::vector<Eigen::Index> chosen;
        chosen.push_back(static_cast<Eigen::Index>(draw_uniform(rng) * static_cast<double>(x.rows())));
        Eigen::VectorXd dist = (x.rowwise() - x.row(chosen[0])).rowwise().squaredNorm();
        while (static_cast<int>(chosen.size()) < ns) {
            const double u = draw_uniform(rng) * dist.sum();
            double acc = 0.0;
            Eigen::Index pick = x.rows() - 1;
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                acc += dist(i);
                if (acc >= u) {
                    pick = i;
                    break;
                }
            }
            chosen.push_back(pick);
            dist = dist.cwiseMin((x.rowwise() - x.row(pick)).rowwise().squaredNorm());
        }
        Eigen::MatrixXd centers(ns, d);
        for (int s = 0; s < ns; ++s) centers.row(s) = x.row(chosen[static_cast<std::size_t>(s)]);
        // a few Lloyd iterations, then per-cluster covariances
        std::vector<int> assign(static_cast<std::size_t>(x.rows()), 0);
        for (int lloyd = 0; lloyd < 10; ++lloyd) {
            Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(ns, d);
            Eigen::VectorXd counts = Eigen::VectorXd::Zero(ns);
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                Eigen::Index best = 0;
                (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
                assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
                sums.row(best) += x.row(i);
                counts(best) += 1.0;
            }
            for (int s = 0; s < ns; ++s)
                if (counts(s) > 0.0) centers.row(s) = sums.row(s) / counts(s);
        }
        for (int s = 0; s < ns; ++s) {
            Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
            double count = 0.0;
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                if (assign[static_cast<std::size_t>(i)] != s) continue;
                const Eigen::RowVectorXd dev = x.row(i) - centers.row(s);
                scatter.noalias() += dev.transpose() * dev;
                count += 1.0;
            }
            m.means.emplace_back(centers.row(s).transpose());
            m.covs.push_back(count > static_cast<double>(d) ? Eigen::MatrixXd(scatter / count + ridge)
                                                            : Eigen::MatrixXd(pooled + ridge));
        }
    } else {
        const Eigen::Index block = std::max<Eigen::Index>(25, d + 1);
        std::vector<Eigen::MatrixXd> acc(static_cast<std::size_t>(ns), Eigen::MatrixXd::Zero(d, d));
        std::vector<double> count(static_cast<std::size_t>(ns), 0.0);
        for (Eigen::Index start = 0; start < x.rows(); start += block) {
            const auto s = static_cast<std::size_t>(draw_uniform(rng) * ns);
            const Eigen::Index len = std::min(block, x.rows() - start);
            acc[s].noalias() += x.middleRows(start, len).transpose() * x.middleRows(start, len);
            count[s] += static_cast<double>(len);
        }
        for (int s = 0; s < ns; ++s) {
            const auto su = static_cast<std::size_t>(s);
            m.means.emplace_back(Eigen::VectorXd::Zero(d));
            m.covs.push_back(count[su] > static_cast<double>(d) ? Eigen::MatrixXd(acc[su] / count[su] + ridge)
                                                                : Eigen::MatrixXd(pooled + ridge));
        }
    }
    return m;
}

/// Baum-Welch from a given start. The covariance update carries a fixed
/// inverse-Wishart-type penalty -c/2 tr(Sigma^-1), which yields the diagonal
/// loading and keeps EM monotone in the penalized objective.
inline HmmFit baum_welch(const Sequences& seqs, HmmModel m, const HmmOptions& opts, double penalty) {
    const Eigen::Index d = m.dim();
    const int ns = m.states();
    HmmFit fit;
    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < opts.max_iter; ++it) {
        Eigen::VectorXd init_acc = Eigen::VectorXd::Zero(ns);
        Eigen::MatrixXd trans_acc = Eigen::MatrixXd::Zero(ns, ns);
        Eigen::VectorXd mass = Eigen::VectorXd::Zero(ns);
        std::vector<Eigen::VectorXd> first(static_cast<std::size_t>(ns), Eigen::VectorXd::Zero(d));
        std::vector<Eigen::MatrixXd> second(static_cast<std::size_t>(ns), Eigen::MatrixXd::Zero(d, d));
        double loglik = 0.0;
        for (const auto& x : seqs) {
            const Posteriors post = forward_backward(m, emission_log_density(m, x));
            loglik += post.log_likelihood;
            init_acc += post.gamma.row(0).transpose();
            trans_acc += post.xi_sum;
            mass += post.gamma.colwise().sum().transpose();
            for (int s = 0; s < ns; ++s) {
                const auto su = static_cast<std::size_t>(s);
                first[su].noalias() += x.transpose() * post.gamma.col(s);
                second[su].noalias() += x.transpose() * post.gamma.col(s).asDiagonal() * x;
            }
        }
        double objective = loglik;
        for (int s = 0; s < ns; ++s) {
            objective -= 0.5 * penalty * m.covs[static_cast<std::size_t>(s)].inverse().trace();
        }
        fit.trace.push_back(objective);
        if (objective < prev - 1e-9 * std::abs(prev)) {
            throw Error(ErrorCode::NumericalBreakdown, "EM objective decreased at iteration " + std::to_string(it) +
                                                           ": " + std::to_string(prev) + " -> " +
                                                           std::to_string(objective));
        }
        fit.log_likelihood = loglik;
        fit.iterations = it;
        fit.model = m;
        if (it > 0 && objective - prev < opts.tol * std::abs(prev)) {
            fit.converged = true;
            return fit;
        }
        prev = objective;

        // M-step
        for (int s = 0; s < ns; ++s) {
            if (mass(s) < static_cast<double>(d + 1)) {
                throw Error(ErrorCode::DegenerateState, "state " + std::to_string(s) + " has responsibility mass " +
                                                            std::to_string(mass(s)) + " < d + 1");
            }
        }
        m.initial = init_acc / init_acc.sum();
        for (int s = 0; s < ns; ++s) {
            const double row = trans_acc.row(s).sum();
            if (row > 0.0) m.transition.row(s) = trans_acc.row(s) / row;
            const auto su = static_cast<std::size_t>(s);
            Eigen::MatrixXd scatter = second[su];
            if (!m.zero_mean) {
                m.means[su] = first[su] / mass(s);
                scatter -= mass(s) * m.means[su] * m.means[su].transpose();
            }
            scatter.diagonal().array() += penalty;
            m.covs[su] = 0.5 * (scatter + scatter.transpose()) / mass(s);
        }
    }
    fit.model = m;
    fit.iterations = opts.max_iter;
    return fit;
}

inline void check_sequences(const Sequences& seqs) {
    if (seqs.empty()) throw Error(ErrorCode::InvalidArgument, "HMM needs at least one sequence");
    const Eigen::Index d = seqs.front().cols();
    for (const auto& s : seqs) {
        if (s.cols() != d) throw Error(ErrorCode::DimMismatch, "HMM sequences differ in dimension");
        if (s.rows() < 1) throw Error(ErrorCode::InvalidArgument, "empty HMM sequence");
        if (!s.allFinite()) throw Error(ErrorCode::ParseError, "non-finite HMM observation");
    }
}

}  // namespace detail

[[nodiscard]] inline double hmm_log_likelihood(const HmmModel& m, const Sequences& seqs) {
    double ll = 0.0;
    for (const auto& x : seqs) ll += detail::forward_backward(m, detail::emission_log_density(m, x)).log_likelihood;
    return ll;
}

/// Baum-Welch with restarts; the restart with the best penalized objective is kept.
/// Restarts that hit a degenerate state are discarded; if all do, DegenerateState is thrown.
[[nodiscard]] inline HmmFit hmm_fit(const Sequences& seqs, int states, const HmmOptions& opts, Rng& rng) {
    detail::check_sequences(seqs);
    if (states < 1) throw Error(ErrorCode::InvalidArgument, "HMM needs at least one state");
    if (opts.restarts < 1 || opts.max_iter < 1) throw Error(ErrorCode::InvalidArgument, "HMM restarts/max_iter < 1");
    const Eigen::MatrixXd pooled = detail::pooled_covariance(seqs, opts.zero_mean);
    const Eigen::Index d = pooled.rows();
    Eigen::Index total = 0;
    for (const auto& s : seqs) total += s.rows();
    const double ridge_abs = opts.ridge * pooled.trace() / static_cast<double>(d);
    const double penalty = ridge_abs * static_cast<double>(total) / states;
    const std::uint64_t base = rng();

    std::vector<HmmFit> fits(static_cast<std::size_t>(opts.restarts));
    std::vector<int> ok(static_cast<std::size_t>(opts.restarts), 0);
    std::vector<std::string> why(static_cast<std::size_t>(opts.restarts));
    parallel_for(fits.size(), opts.threads, [&](std::size_t r) {
        Rng local(derive_seed(base, r));
        try {
            HmmModel start = detail::random_start(seqs, states, opts.zero_mean, pooled, ridge_abs, local);
            fits[r] = detail::baum_welch(seqs, std::move(start), opts, penalty);
            ok[r] = 1;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateState) throw;
            why[r] = e.what();
        }
    });
    int best = -1;
    for (std::size_t r = 0; r < fits.size(); ++r) {
        if (ok[r] && (best < 0 || fits[r].trace.back() > fits[static_cast<std::size_t>(best)].trace.back())) {
            best = static_cast<int>(r);
        }
    }
    if (best < 0) {
        throw Error(ErrorCode::DegenerateState, "all " + std::to_string(opts.restarts) + " restarts with S = " +
                                                    std::to_string(states) + " degenerated (" + why.front() + ")");
    }
    return std::move(fits[static_cast<std::size_t>(best)]);
}

[[nodiscard]] inline HmmFit hmm_fit(const LogCovSeries& y, int states, const HmmOptions& opts, Rng& rng) {
    return hmm_fit(y.values, states, opts, rng);
}

/// Raw-signal fit: zero-mean emissions with state-dependent covariance.
[[nodiscard]] inline HmmFit hmm_fit(const TrialSet& set, int states, HmmOptions opts, Rng& rng) {
    set.validate();
    Sequences seqs;
    for (const auto& tr : set.trials) seqs.push_back(tr.samples);
    opts.zero_mean = true;
    return hmm_fit(seqs, states, opts, rng);
}

/// Largest S <= s_max whose fit converges without degenerating, searched downward.
[[nodiscard]] inline HmmFit hmm_fit_largest(const Sequences& seqs, int s_max, const HmmOptions& opts, Rng& rng) {
    for (int s = s_max; s >= 1; --s) {
        try {
            HmmFit fit = hmm_fit(seqs, s, opts, rng);
            if (fit.converged || s == 1) return fit;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateState || s == 1) throw;
        }
    }
    throw Error(ErrorCode::InvalidArgument, "hmm_fit_largest: s_max < 1");
}

[[nodiscard]] inline std::vector<int> hmm_viterbi(const HmmModel& m, const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd logb = detail::emission_log_density(m, x);
    const Eigen::Index len = logb.rows();
    const int ns = m.states();
    const Eigen::MatrixXd log_a = m.transition.array().log().matrix();
    Eigen::MatrixXd delta(len, ns);
    Eigen::MatrixXi from(len, ns);
    delta.row(0) = m.initial.array().log().matrix().transpose() + logb.row(0);
    for (Eigen::Index t = 1; t < len; ++t) {
        for (int s = 0; s < ns; ++s) {
            Eigen::Index arg = 0;
            const double best = (delta.row(t - 1).transpose() + log_a.col(s)).maxCoeff(&arg);
            delta(t, s) = best + logb(t, s);
            from(t, s) = static_cast<int>(arg);
        }
    }
    std::vector<int> path(static_cast<std::size_t>(len));
    Eigen::Index last = 0;
    delta.row(len - 1).maxCoeff(&last);
    path.back() = static_cast<int>(last);
    for (Eigen::Index t = len - 1; t > 0; --t) {
        path[static_cast<std::size_t>(t - 1)] = from(t, path[static_cast<std::size_t>(t)]);
    }
    return path;
}

/// Joint log-probability of an observation sequence and a given state path.
[[nodiscard]] inline double hmm_path_log_prob(const HmmModel& m, const Eigen::MatrixXd& x, const std::vector<int>& path) {
    if (static_cast<Eigen::Index>(path.size()) != x.rows()) throw Error(ErrorCode::DimMismatch, "path length");
    const Eigen::MatrixXd logb = detail::emission_log_density(m, x);
    double lp = std::log(m.initial(path[0])) + logb(0, path[0]);
    for (std::size_t t = 1; t < path.size(); ++t) {
        lp += std::log(m.transition(path[t - 1], path[t])) + logb(static_cast<Eigen::Index>(t), path[t]);
    }
    return lp;
}

/// Viterbi-decoded covariance process per trial: exp(unvec(state mean)) for
/// log-covariance features.
[[nodiscard]] inline std::vector<CovarianceProcess> hmm_reconstruct(const HmmModel& m, const LogCovSeries& y) {
    if (m.zero_mean) throw Error(ErrorCode::InvalidArgument, "zero-mean HMM holds covariances, not log-cov means");
    std::vector<SpdMatrix> state_cov;
    for (const auto& mu : m.means) state_cov.push_back(matrix_exp(unvec_upper(mu)));
    std::vector<CovarianceProcess> out;
    for (const auto& v : y.values) {
        CovarianceProcess proc;
        for (int s : hmm_viterbi(m, v)) proc.push_back(state_cov[static_cast<std::size_t>(s)]);
        out.push_back(std::move(proc));
    }
    return out;
}

/// Raw-signal variant: each decoded time point gets its state's emission covariance.
[[nodiscard]] inline std::vector<CovarianceProcess> hmm_reconstruct(const HmmModel& m, const TrialSet& set) {
    std::vector<CovarianceProcess> out;
    for (const auto& tr : set.trials) {
        CovarianceProcess proc;
        for (int s : hmm_viterbi(m, tr.samples)) proc.push_back(m.covs[static_cast<std::size_t>(s)]);
        out.push_back(std::move(proc));
    }
    return out;
}

struct ConditionProportions {
    std::string condition;
    Eigen::VectorXd proportions;
};

/// Fraction of Viterbi-decoded time steps in each state, per condition (in
/// order of first appearance).
[[nodiscard]] inline std::vector<ConditionProportions> hmm_state_proportions(const HmmModel& m, const Sequences& seqs,
                                                                           const std::vector<std::string>& labels) {
    if (labels.size() != seqs.size()) throw Error(ErrorCode::MissingLabel, "one label per sequence required");
    std::vector<ConditionProportions> out;
    std::vector<double> counts;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& c) { return c.condition == labels[i]; });
        if (it == out.end()) {
            out.push_back({labels[i], Eigen::VectorXd::Zero(m.states())});
            it = out.end() - 1;
        }
        for (int s : hmm_viterbi(m, seqs[i])) it->proportions(s) += 1.0;
    }
    for (auto& c : out) c.proportions /= c.proportions.sum();
    return out;
}

struct AicPoint {
    int states = 0;
    double aic = 0.0;
    double log_likelihood = 0.0;
    double params = 0.0;
};

[[nodiscard]] inline double hmm_param_count(int states, Eigen::Index d, bool zero_mean) {
    const double s = states;
    const double dd = static_cast<double>(d);
    return (s - 1.0) + s * (s - 1.0) + s * ((zero_mean ? 0.0 : dd) + dd * (dd + 1.0) / 2.0);
}

[[nodiscard]] inline std::vector<AicPoint> hmm_elbow(const Sequences& seqs, const std::vector<int>& s_range,
                                                     const HmmOptions& opts, Rng& rng) {
    if (s_range.empty()) throw Error(ErrorCode::InvalidArgument, "hmm_elbow: empty state range");
    std::vector<AicPoint> out;
    for (int s : s_range) {
        const HmmFit fit = hmm_fit(seqs, s, opts, rng);
        AicPoint pt;
        pt.states = s;
        pt.log_likelihood = fit.log_likelihood;
        pt.params = hmm_param_count(s, fit.model.dim(), fit.model.zero_mean);
        pt.aic = 2.0 * pt.params - 2.0 * pt.log_likelihood;
        out.push_back(pt);
    }
    return out;
}

}  // namespace lfgp
