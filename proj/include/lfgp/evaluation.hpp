#pragma once

// Latent-trajectory extraction and cross-validated condition separation
// (k-NN and L2-penalized logistic regression on MCMC draws).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lfgp/error.hpp"
#include "lfgp/parallel.hpp"
#include "lfgp/random.hpp"
#include "lfgp/sampler.hpp"

namespace lfgp {

/// One row per draw: the condition's median-over-trials factor paths,
/// flattened time-major (entry t * r + j).
struct LatentTrajectory {
    std::string condition;
    Eigen::MatrixXd draws;
    Eigen::Index windows = 0;
    Eigen::Index factors = 0;
};

[[nodiscard]] inline std::vector<LatentTrajectory> extract_trajectories(const ChainDraws& chain,
                                                                        const std::vector<std::string>& labels) {
    if (chain.empty()) throw Error(ErrorCode::EmptyChain, "extract_trajectories: empty chain");
    const std::size_t n = chain.states.front().factors.size();
    if (labels.size() != n) {
        throw Error(ErrorCode::MissingLabel, std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                                                 " trials");
    }
    std::vector<std::string> conditions;
    std::vector<std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i].empty()) throw Error(ErrorCode::MissingLabel, "trial " + std::to_string(i) + " has no label");
        auto it = std::find(conditions.begin(), conditions.end(), labels[i]);
        if (it == conditions.end()) {
            conditions.push_back(labels[i]);
            members.emplace_back();
            it = conditions.end() - 1;
        }
        members[static_cast<std::size_t>(it - conditions.begin())].push_back(i);
    }
    for (std::size_t c = 0; c < conditions.size(); ++c) {
        if (members[c].size() < 2) {
            throw Error(ErrorCode::InvalidArgument, "condition '" + conditions[c] + "' has fewer than 2 trials");
        }
    }
    const Eigen::Index tw = chain.states.front().factors.front().rows();
    const Eigen::Index r = chain.states.front().factors.front().cols();
    std::vector<LatentTrajectory> out;
    for (std::size_t c = 0; c < conditions.size(); ++c) {
        LatentTrajectory traj;
        traj.condition = conditions[c];
        traj.windows = tw;
        traj.factors = r;
        traj.draws.resize(static_cast<Eigen::Index>(chain.size()), tw * r);
        std::vector<double> buf(members[c].size());
        for (std::size_t d = 0; d < chain.size(); ++d) {
            const auto& f = chain.states[d].factors;
            for (Eigen::Index t = 0; t < tw; ++t) {
                for (Eigen::Index j = 0; j < r; ++j) {
                    for (std::size_t k = 0; k < members[c].size(); ++k) buf[k] = f[members[c][k]](t, j);
                    std::sort(buf.begin(), buf.end());
                    const std::size_t h = buf.size() / 2;
                    traj.draws(static_cast<Eigen::Index>(d), t * r + j) =
                        buf.size() % 2 == 1 ? buf[h] : 0.5 * (buf[h - 1] + buf[h]);
                }
            }
        }
        out.push_back(std::move(traj));
    }
    return out;
}

/// Standardized distance between the two conditions' posterior-mean
/// trajectories at each window.
[[nodiscard]] inline Eigen::VectorXd separation_curve(const LatentTrajectory& a, const LatentTrajectory& b) {
    if (a.draws.cols() != b.draws.cols() || a.factors != b.factors) {
        throw Error(ErrorCode::DimMismatch, "trajectories differ in shape");
    }
    const Eigen::Index r = a.factors;
    const Eigen::Index tw = a.windows;
    const Eigen::RowVectorXd ma = a.draws.colwise().mean();
    const Eigen::RowVectorXd mb = b.draws.colwise().mean();
    const Eigen::RowVectorXd va = (a.draws.rowwise() - ma).colwise().squaredNorm() / std::max<double>(1.0, static_cast<double>(a.draws.rows() - 1));
    const Eigen::RowVectorXd vb = (b.draws.rowwise() - mb).colwise().squaredNorm() / std::max<double>(1.0, static_cast<double>(b.draws.rows() - 1));
    Eigen::VectorXd curve(tw);
    for (Eigen::Index t = 0; t < tw; ++t) {
        const double dist = (ma.segment(t * r, r) - mb.segment(t * r, r)).norm();
        const double spread = std::sqrt(0.5 * (va.segment(t * r, r).sum() + vb.segment(t * r, r).sum()) / r);
        curve(t) = spread > 0.0 ? dist / spread : (dist > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// classifiers

/// Euclidean k-NN majority vote. A tie between labels goes to the tied label
/// of the nearest neighbor. Equal distances are ordered by training value,
/// which keeps the result independent of the training order.
[[nodiscard]] inline std::vector<int> knn_classify(const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
                                                   const Eigen::MatrixXd& test_x, int k) {
    if (train_x.rows() == 0) throw Error(ErrorCode::EmptyTrain, "knn_classify: empty training set");
    if (static_cast<Eigen::Index>(train_y.size()) != train_x.rows()) {
        throw Error(ErrorCode::DimMismatch, "knn_classify: label count differs from training rows");
    }
    if (k < 1 || k > train_x.rows()) {
        throw Error(ErrorCode::InvalidArgument, "knn_classify: k must lie in [1, train size]");
    }
    if (test_x.cols() != train_x.cols()) throw Error(ErrorCode::DimMismatch, "knn_classify: feature dimension");
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(test_x.rows()));
    std::vector<std::size_t> idx(static_cast<std::size_t>(train_x.rows()));
    Eigen::VectorXd dist(train_x.rows());
    for (Eigen::Index q = 0; q < test_x.rows(); ++q) {
        dist = (train_x.rowwise() - test_x.row(q)).rowwise().squaredNorm();
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](std::size_t a, std::size_t b) {
            if (dist(static_cast<Eigen::Index>(a)) != dist(static_cast<Eigen::Index>(b))) {
                return dist(static_cast<Eigen::Index>(a)) < dist(static_cast<Eigen::Index>(b));
            }
            if (train_y[a] != train_y[b]) return train_y[a] < train_y[b];
            const auto ra = train_x.row(static_cast<Eigen::Index>(a));
            const auto rb = train_x.row(static_cast<Eigen::Index>(b));
            return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
        });
        std::vector<std::pair<int, int>> votes;  // (label, count)
        for (int m = 0; m < k; ++m) {
            const int lab = train_y[idx[static_cast<std::size_t>(m)]];
            auto it = std::find_if(votes.begin(), votes.end(), [&](const auto& v) { return v.first == lab; });
            if (it == votes.end()) {
                votes.emplace_back(lab, 1);
            } else {
                ++it->second;
            }
        }
        int top = 0;
        for (const auto& v : votes) top = std::max(top, v.second);
        // votes are in order of first (nearest) appearance
        for (const auto& v : votes) {
            if (v.second == top) {
                out.push_back(v.first);
                break;
            }
        }
    }
    return out;
}

struct LogisticModel {
    Eigen::VectorXd weights;
    double intercept = 0.0;
    int iterations = 0;
    double gradient_norm = 0.0;
};

struct LogisticPrediction {
    std::vector<int> labels;
    Eigen::VectorXd probabilities;  // P(label = 1)
    LogisticModel model;
};

namespace detail {

inline double log1p_exp(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline void check_binary(const std::vector<int>& y, Eigen::Index rows) {
    if (static_cast<Eigen::Index>(y.size()) != rows) throw Error(ErrorCode::DimMismatch, "label count");
    if (y.empty()) throw Error(ErrorCode::EmptyTrain, "logistic regression: empty training set");
    bool zero = false, one = false;
    for (int v : y) {
        if (v == 0) {
            zero = true;
        } else if (v == 1) {
            one = true;
        } else {
            throw Error(ErrorCode::InvalidArgument, "logistic labels must be 0 or 1");
        }
    }
    if (!(zero && one)) throw Error(ErrorCode::NoSecondClass, "training labels contain a single class");
}

}  // namespace detail

/// Penalized negative log-likelihood: sum log(1 + e^z) - y z + l2/2 |w|^2, z = X w + b.
[[nodiscard]] inline double logistic_objective(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& x,
                                               const std::vector<int>& y, double l2) {
    const Eigen::VectorXd z = (x * w).array() + b;
    double f = 0.5 * l2 * w.squaredNorm();
    for (Eigen::Index i = 0; i < z.size(); ++i) f += detail::log1p_exp(z(i)) - y[static_cast<std::size_t>(i)] * z(i);
    return f;
}

/// Gradient of logistic_objective; the last entry is the intercept component.
[[nodiscard]] inline Eigen::VectorXd logistic_gradient(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& x,
                                                       const std::vector<int>& y, double l2) {
    const Eigen::VectorXd z = (x * w).array() + b;
    Eigen::VectorXd resid(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) resid(i) = detail::sigmoid(z(i)) - y[static_cast<std::size_t>(i)];
    Eigen::VectorXd g(w.size() + 1);
    g.head(w.size()) = x.transpose() * resid + l2 * w;
    g(w.size()) = resid.sum();
    return g;
}

/// Damped Newton until the gradient norm drops below 1e-8 or the Newton
/// decrement falls under the rounding level of the objective. The intercept
/// is not penalized.
[[nodiscard]] inline LogisticModel logistic_fit(const Eigen::MatrixXd& x, const std::vector<int>& y, double l2,
                                                int max_iter = 100) {
    detail::check_binary(y, x.rows());
    if (!(l2 >= 0.0)) throw Error(ErrorCode::InvalidArgument, "l2 must be nonnegative");
    const Eigen::Index d = x.cols();
    Eigen::MatrixXd xa(x.rows(), d + 1);
    xa << x, Eigen::VectorXd::Ones(x.rows());
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
    Eigen::VectorXd pen = Eigen::VectorXd::Constant(d + 1, l2);
    pen(d) = 0.0;
    LogisticModel m;
    double f = logistic_objective(beta.head(d), beta(d), x, y, l2);
    const auto finish = [&]() {
        m.weights = beta.head(d);
        m.intercept = beta(d);
        if (l2 == 0.0) {
            // the gradient also vanishes along a diverging ray when the classes separate
            const Eigen::VectorXd z = xa * beta;
            bool separated = true;
            for (Eigen::Index i = 0; i < z.size() && separated; ++i) {
                separated = y[static_cast<std::size_t>(i)] == 1 ? z(i) > 0.0 : z(i) < 0.0;
            }
            if (separated) {
                throw Error(ErrorCode::NoConvergence,
                            "logistic regression: classes are linearly separable and l2 = 0, no finite optimum");
            }
        }
        return m;
    };
    for (int it = 0; it <= max_iter; ++it) {
        const Eigen::VectorXd g = logistic_gradient(beta.head(d), beta(d), x, y, l2);
        m.iterations = it;
        m.gradient_norm = g.norm();
        if (m.gradient_norm < 1e-8) return finish();
        if (it == max_iter) break;
        const Eigen::VectorXd z = xa * beta;
        Eigen::VectorXd wts(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            const double s = detail::sigmoid(z(i));
            wts(i) = s * (1.0 - s);
        }
        Eigen::MatrixXd h = xa.transpose() * wts.asDiagonal() * xa;
        h.diagonal() += pen;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
        Eigen::VectorXd step = ldlt.solve(g);
        if (ldlt.info() != Eigen::Success || !step.allFinite()) {
            // singular curvature: fall back to a small gradient step
            step = g / std::max(1.0, g.norm());
        } else if (0.5 * g.dot(step) <= 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f))) {
            return finish();
        }
        double t = 1.0;
        double f_new = f;
        Eigen::VectorXd trial;
        for (int half = 0; half < 60; ++half) {
            trial = beta - t * step;
            f_new = logistic_objective(trial.head(d), trial(d), x, y, l2);
            if (f_new <= f - 1e-4 * t * g.dot(step) || f_new <= f) break;
            t *= 0.5;
        }
        if (!(f_new <= f)) break;
        beta = trial;
        f = f_new;
    }
    throw Error(ErrorCode::NoConvergence, "logistic regression: gradient norm " + std::to_string(m.gradient_norm) +
                                              " after " + std::to_string(m.iterations) + " Newton iterations");
}

[[nodiscard]] inline LogisticPrediction logistic_predict(const LogisticModel& m, const Eigen::MatrixXd& x) {
    if (x.cols() != m.weights.size()) throw Error(ErrorCode::DimMismatch, "logistic_predict: feature dimension");
    LogisticPrediction p;
    p.model = m;
    p.probabilities.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        p.probabilities(i) = detail::sigmoid(x.row(i).dot(m.weights) + m.intercept);
        p.labels.push_back(p.probabilities(i) > 0.5 ? 1 : 0);
    }
    return p;
}

[[nodiscard]] inline LogisticPrediction logistic_fit_predict(const Eigen::MatrixXd& train_x,
                                                             const std::vector<int>& train_y,
                                                             const Eigen::MatrixXd& test_x, double l2) {
    return logistic_predict(logistic_fit(train_x, train_y, l2), test_x);
}

// ---------------------------------------------------------------------------
// cross-validated separation

enum class Classifier { Logistic, Knn };

[[nodiscard]] inline Classifier parse_classifier(const std::string& s) {
    if (s == "logistic") return Classifier::Logistic;
    if (s == "knn") return Classifier::Knn;
    throw Error(ErrorCode::ConfigError, "unknown classifier '" + s + "'");
}

[[nodiscard]] inline std::string classifier_name(Classifier c) { return c == Classifier::Logistic ? "logistic" : "knn"; }

struct SeparationOptions {
    int k = 5;          // k-NN neighbours
    double l2 = 1.0;    // logistic penalty
    int threads = 1;
};

struct SeparationReport {
    Classifier classifier = Classifier::Knn;
    double accuracy_mean = 0.0;
    double accuracy_sd = 0.0;
    int folds = 0;
    std::vector<double> fold_accuracy;
};

namespace detail {

inline void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(draw_uniform(rng) * static_cast<double>(i));
        std::swap(v[i - 1], v[std::min(j, i - 1)]);
    }
}

}  // namespace detail

/// Stratified k-fold accuracy of classifying draws of a (label 0) against b (label 1).
[[nodiscard]] inline SeparationReport separation_score(const LatentTrajectory& a, const LatentTrajectory& b,
                                                       Classifier classifier, int folds, Rng& rng,
                                                       const SeparationOptions& opts = {}) {
    if (folds < 2) throw Error(ErrorCode::InvalidArgument, "separation_score: need at least 2 folds");
    if (a.draws.rows() < folds || b.draws.rows() < folds) {
        throw Error(ErrorCode::TooFewDraws, "each condition needs at least " + std::to_string(folds) + " draws (have " +
                                                std::to_string(a.draws.rows()) + " and " +
                                                std::to_string(b.draws.rows()) + ")");
    }
    if (a.draws.cols() != b.draws.cols()) throw Error(ErrorCode::DimMismatch, "trajectory dimensions differ");
    const Eigen::Index na = a.draws.rows();
    const Eigen::Index total = na + b.draws.rows();
    Eigen::MatrixXd x(total, a.draws.cols());
    x << a.draws, b.draws;
    std::vector<int> y(static_cast<std::size_t>(total), 0);
    std::fill(y.begin() + na, y.end(), 1);

    std::vector<int> fold_of(static_cast<std::size_t>(total));
    for (int cls = 0; cls < 2; ++cls) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < y.size(); ++i)
            if (y[i] == cls) idx.push_back(i);
        detail::fisher_yates(idx, rng);
        for (std::size_t pos = 0; pos < idx.size(); ++pos) fold_of[idx[pos]] = static_cast<int>(pos % folds);
    }

    SeparationReport rep;
    rep.classifier = classifier;
    rep.folds = folds;
    rep.fold_accuracy.assign(static_cast<std::size_t>(folds), 0.0);
    parallel_for(static_cast<std::size_t>(folds), opts.threads, [&](std::size_t f) {
        std::vector<Eigen::Index> tr, te;
        for (Eigen::Index i = 0; i < total; ++i) (fold_of[static_cast<std::size_t>(i)] == static_cast<int>(f) ? te : tr).push_back(i);
        const Eigen::MatrixXd xtr = x(tr, Eigen::all);
        const Eigen::MatrixXd xte = x(te, Eigen::all);
        std::vector<int> ytr, yte;
        for (auto i : tr) ytr.push_back(y[static_cast<std::size_t>(i)]);
        for (auto i : te) yte.push_back(y[static_cast<std::size_t>(i)]);
        const std::vector<int> pred = classifier == Classifier::Knn
                                          ? knn_classify(xtr, ytr, xte, std::min<int>(opts.k, static_cast<int>(tr.size())))
                                          : logistic_fit_predict(xtr, ytr, xte, opts.l2).labels;
        int hit = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == yte[i];
        rep.fold_accuracy[f] = static_cast<double>(hit) / static_cast<double>(pred.size());
    });
    double mean = 0.0;
    for (double v : rep.fold_accuracy) mean += v;
    mean /= folds;
    double ss = 0.0;
    for (double v : rep.fold_accuracy) ss += (v - mean) * (v - mean);
    rep.accuracy_mean = mean;
    rep.accuracy_sd = std::sqrt(ss / (folds - 1));
    return rep;
}

/// Relabels the trials of one condition at random as "<condition>#1" and
/// "<condition>#2" (sizes differ by at most one); other labels are unchanged.
[[nodiscard]] inline std::vector<std::string> split_condition(const std::vector<std::string>& labels,
                                                              const std::string& condition, Rng& rng) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == condition) idx.push_back(i);
    if (idx.size() < 2) throw Error(ErrorCode::MissingLabel, "condition '" + condition + "' has fewer than 2 trials");
    detail::fisher_yates(idx, rng);
    std::vector<std::string> out = labels;
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = condition + (k < idx.size() / 2 ? "#1" : "#2");
    return out;
}

}  // namespace lfgp
