#pragma once

// Gaussian-tapered sliding-window covariance estimation and conversion of
// raw trials to log-covariance series.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lfgp/error.hpp"
#include "lfgp/spd_geometry.hpp"

namespace lfgp {

/// One p-variate recording: samples is T x p (rows are time points).
struct Trial {
    Eigen::MatrixXd samples;
    double sample_rate_hz = 1000.0;
    std::string label;

    [[nodiscard]] Eigen::Index length() const { return samples.rows(); }
    [[nodiscard]] Eigen::Index channels() const { return samples.cols(); }
};

struct TrialSet {
    std::vector<Trial> trials;

    [[nodiscard]] std::size_t size() const { return trials.size(); }
    [[nodiscard]] bool empty() const { return trials.empty(); }

    /// Throws RaggedTrials unless every trial shares p and T, T >= 2 and all samples are finite.
    void validate() const {
        if (trials.empty()) throw Error(ErrorCode::RaggedTrials, "trial set is empty");
        const Eigen::Index p = trials.front().channels();
        const Eigen::Index t = trials.front().length();
        for (std::size_t i = 0; i < trials.size(); ++i) {
            const auto& tr = trials[i];
            if (tr.channels() != p || tr.length() != t) {
                throw Error(ErrorCode::RaggedTrials, "trial " + std::to_string(i) + " has shape " +
                                                         std::to_string(tr.length()) + "x" +
                                                         std::to_string(tr.channels()) + ", expected " +
                                                         std::to_string(t) + "x" + std::to_string(p));
            }
            if (tr.length() < 2) throw Error(ErrorCode::RaggedTrials, "trials need at least 2 samples");
            if (!tr.samples.allFinite()) {
                throw Error(ErrorCode::ParseError, "trial " + std::to_string(i) + " has non-finite samples");
            }
        }
    }

    [[nodiscard]] std::vector<std::string> labels() const {
        std::vector<std::string> out;
        out.reserve(trials.size());
        for (const auto& tr : trials) out.push_back(tr.label);
        return out;
    }
};

struct TaperSpec {
    int window_len = 50;
    double taper_scale = 0.5;
};

struct SlidingWindowOptions {
    bool center = true;     // subtract each trial's per-channel mean first
    double jitter = 1e-6;   // relative ridge: jitter * trace/p added to the diagonal
};

/// n trials of T_w x q log-covariance vectors; time_index holds window centers in samples.
struct LogCovSeries {
    std::vector<Eigen::MatrixXd> values;
    Eigen::VectorXd time_index;

    [[nodiscard]] Eigen::Index n() const { return static_cast<Eigen::Index>(values.size()); }
    [[nodiscard]] Eigen::Index windows() const { return values.empty() ? 0 : values.front().rows(); }
    [[nodiscard]] Eigen::Index q() const { return values.empty() ? 0 : values.front().cols(); }

    /// Keeps every stride-th window (starting at the first).
    [[nodiscard]] LogCovSeries subsample(Eigen::Index stride) const {
        if (stride <= 1) return *this;
        const Eigen::Index tw = windows();
        const Eigen::Index kept = (tw + stride - 1) / stride;
        LogCovSeries out;
        out.time_index.resize(kept);
        for (Eigen::Index k = 0; k < kept; ++k) out.time_index(k) = time_index(k * stride);
        out.values.reserve(values.size());
        for (const auto& v : values) {
            Eigen::MatrixXd s(kept, v.cols());
            for (Eigen::Index k = 0; k < kept; ++k) s.row(k) = v.row(k * stride);
            out.values.push_back(std::move(s));
        }
        return out;
    }
};

/// Maps each row (a log-covariance vector) back to an SPD matrix.
[[nodiscard]] inline CovarianceProcess covariance_from_log_rows(const Eigen::MatrixXd& rows) {
    CovarianceProcess proc;
    proc.reserve(static_cast<std::size_t>(rows.rows()));
    for (Eigen::Index t = 0; t < rows.rows(); ++t) proc.push_back(matrix_exp(unvec_upper(rows.row(t).transpose())));
    return proc;
}

/// Gaussian taper h(t) = exp{-1/2 ((t - L/2) / (tau L / 2))^2} / zeta on t = 0..L-1.
[[nodiscard]] inline Eigen::VectorXd taper_weights(const TaperSpec& spec) {
    if (spec.window_len < 1 || !(spec.taper_scale > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "taper_weights: need window_len >= 1 and taper_scale > 0");
    }
    const int len = spec.window_len;
    const double mid = len / 2.0;
    const double width = spec.taper_scale * len / 2.0;
    Eigen::VectorXd h(len);
    for (int t = 0; t < len; ++t) {
        const double z = (t - mid) / width;
        h(t) = std::exp(-0.5 * z * z);
    }
    return h / h.sum();
}

[[nodiscard]] inline Eigen::VectorXd window_centers(Eigen::Index samples, int window_len) {
    const Eigen::Index tw = samples - window_len + 1;
    Eigen::VectorXd c(std::max<Eigen::Index>(tw, 0));
    for (Eigen::Index t = 0; t < tw; ++t) c(t) = static_cast<double>(t) + (window_len - 1) / 2.0;
    return c;
}

/// One jittered p x p estimate per valid window start (T - L + 1 of them).
[[nodiscard]] inline CovarianceProcess sliding_window_cov(const Trial& trial, const TaperSpec& spec,
                                                          const SlidingWindowOptions& opts = {}) {
    const Eigen::Index len = spec.window_len;
    const Eigen::Index total = trial.length();
    if (len > total) {
        throw Error(ErrorCode::WindowTooLong, "window length " + std::to_string(len) +
                                                  " exceeds trial length " + std::to_string(total));
    }
    const Eigen::VectorXd h = taper_weights(spec);
    Eigen::MatrixXd x = trial.samples;
    if (opts.center) x.rowwise() -= x.colwise().mean();

    const Eigen::Index p = x.cols();
    CovarianceProcess out;
    out.reserve(static_cast<std::size_t>(total - len + 1));
    for (Eigen::Index t = 0; t + len <= total; ++t) {
        const auto block = x.middleRows(t, len);
        Eigen::MatrixXd k = block.transpose() * h.asDiagonal() * block;
        k = 0.5 * (k + k.transpose());
        const double ridge = opts.jitter * k.trace() / static_cast<double>(p);
        k.diagonal().array() += ridge;
        out.push_back(std::move(k));
    }
    return out;
}

[[nodiscard]] inline LogCovSeries to_log_cov_series(const TrialSet& set, const TaperSpec& spec,
                                                    const SlidingWindowOptions& opts = {}) {
    set.validate();
    LogCovSeries series;
    series.time_index = window_centers(set.trials.front().length(), spec.window_len);
    series.values.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        const CovarianceProcess cov = sliding_window_cov(set.trials[i], spec, opts);
        const Eigen::Index p = set.trials[i].channels();
        Eigen::MatrixXd y(static_cast<Eigen::Index>(cov.size()), triangular_number(p));
        for (std::size_t t = 0; t < cov.size(); ++t) {
            try {
                y.row(static_cast<Eigen::Index>(t)) = vec_upper(matrix_log(cov[t])).transpose();
            } catch (const Error& e) {
                throw Error(e.code(), "trial " + std::to_string(i) + ", window " + std::to_string(t) + ": " +
                                          e.what());
            }
        }
        series.values.push_back(std::move(y));
    }
    return series;
}

}  // namespace lfgp
