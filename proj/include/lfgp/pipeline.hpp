#pragma once

// Subcommand bodies. Each builds its complete OutputSet in memory; nothing is
// written unless every step succeeds.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lfgp/baselines.hpp"
#include "lfgp/cli_io.hpp"
#include "lfgp/error.hpp"
#include "lfgp/evaluation.hpp"
#include "lfgp/experiments.hpp"
#include "lfgp/horseshoe.hpp"
#include "lfgp/random.hpp"
#include "lfgp/sampler.hpp"
#include "lfgp/spd_geometry.hpp"
#include "lfgp/sw_estimator.hpp"

namespace lfgp {

// Child stream ids under the master seed.
namespace stream {
inline constexpr std::uint64_t kFit = 1;
inline constexpr std::uint64_t kHorseshoe = 2;
inline constexpr std::uint64_t kSplit = 3;
inline constexpr std::uint64_t kClassify = 4;
inline constexpr std::uint64_t kComparison = 5;
inline constexpr std::uint64_t kContraction = 6;
inline constexpr std::uint64_t kHmm = 7;
inline constexpr std::uint64_t kSimulate = 11;
}  // namespace stream

struct SimulatedData {
    TrialSet trials;
    std::vector<std::string> conditions;
    std::vector<GroundTruth> truth;  // one per condition, sharing the loading matrix
};

/// Each condition c has log-covariance path (U_0 + effect U_c) A, with U_0
/// and U_c independent draws of the configured dynamics and A shared. A is
/// scaled once over all conditions. Trials within a condition differ only by
/// sampling noise.
[[nodiscard]] inline SimulatedData simulate_conditions(const SimulateConfig& sim, std::uint64_t seed) {
    DynamicsScenario sc;
    sc.kind = sim.scenario;
    sc.r_true = sim.r_true;
    sc.T = sim.T;
    sc.knots = sim.knots;
    sc.amplitude = sim.amplitude;
    sc.validate();
    Rng rng(derive_seed(seed, stream::kSimulate));
    const Eigen::MatrixXd base = gen_dynamics(sc, rng);
    const auto nc = static_cast<Eigen::Index>(sim.conditions.size());
    Eigen::MatrixXd stacked(sim.T * nc, sim.r_true);
    for (Eigen::Index c = 0; c < nc; ++c) {
        Eigen::MatrixXd u = base;
        if (sim.effect > 0.0) {
            Rng rc(derive_seed(seed, stream::kSimulate, static_cast<std::uint64_t>(c) + 1));
            u += sim.effect * gen_dynamics(sc, rc);
        }
        stacked.middleRows(c * sim.T, sim.T) = u;
    }
    const GroundTruth all = make_ground_truth(stacked, sim.p, rng, sim.truth);
    SimulatedData out;
    for (Eigen::Index c = 0; c < nc; ++c) {
        const ConditionSpec& spec = sim.conditions[static_cast<std::size_t>(c)];
        GroundTruth g;
        g.u = stacked.middleRows(c * sim.T, sim.T);
        g.a = all.a;
        g.k.assign(all.k.begin() + c * sim.T, all.k.begin() + (c + 1) * sim.T);
        Rng rt(derive_seed(seed, stream::kSimulate + 1, static_cast<std::uint64_t>(c)));
        TrialSet part = gen_dataset(g.k, spec.trials, rt, spec.label);
        for (auto& tr : part.trials) {
            tr.sample_rate_hz = sim.sample_rate_hz;
            out.trials.trials.push_back(std::move(tr));
        }
        out.conditions.push_back(spec.label);
        out.truth.push_back(std::move(g));
    }
    return out;
}

namespace detail {

struct Stamp {
    std::uint64_t seed = 0;
    std::uint64_t hash = 0;

    [[nodiscard]] CsvBuilder csv(const std::vector<std::string>& columns) const { return {seed, hash, columns}; }
};

inline Stamp stamp_of(const RunConfig& cfg) { return {cfg.seed(), config_hash(cfg)}; }

/// Type-7 quantile of unsorted values (the buffer is reordered).
inline double quantile(std::vector<double>& v, double prob) {
    std::sort(v.begin(), v.end());
    const double h = prob * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Band {
    double lower = 0.0;
    double median = 0.0;
    double upper = 0.0;
};

inline Band band(std::vector<double>& v) { return {quantile(v, 0.025), quantile(v, 0.5), quantile(v, 0.975)}; }

struct Prepared {
    TrialSet trials;
    TaperSpec taper;
    LogCovSeries full;    // every window
    LogCovSeries series;  // every stride-th window, the model's input
    double rate = 1000.0;
};

inline Prepared prepare(const RunConfig& cfg) {
    Prepared p;
    p.trials = load_trials(cfg.data_dir());
    p.rate = p.trials.trials.front().sample_rate_hz;
    p.taper = cfg.estimator.taper(p.rate);
    SlidingWindowOptions opts;
    opts.center = cfg.estimator.center;
    opts.jitter = cfg.estimator.jitter;
    p.full = to_log_cov_series(p.trials, p.taper, opts);
    p.series = p.full.subsample(cfg.estimator.stride);
    return p;
}

inline ModelConfig fit_model_config(const RunConfig& cfg) {
    ModelConfig m = cfg.model;
    m.mcmc.seed = derive_seed(cfg.seed(), stream::kFit);
    return m;
}

inline std::vector<Eigen::Index> snapshot_rows(Eigen::Index rows, int count) {
    std::vector<Eigen::Index> out;
    if (rows <= 0) return out;
    const Eigen::Index k = std::min<Eigen::Index>(count, rows);
    for (Eigen::Index s = 0; s < k; ++s) {
        const Eigen::Index r = k == 1 ? rows / 2 : (s * (rows - 1)) / (k - 1);
        if (out.empty() || out.back() != r) out.push_back(r);
    }
    return out;
}

/// Appends upper-triangle rows "method,trial,label,window,time_s,i,j,value".
inline void covariance_rows(CsvBuilder& csv, const std::string& method, const std::vector<CovarianceProcess>& procs,
                            const TrialSet& trials, const Eigen::VectorXd& centers, double rate,
                            const std::vector<Eigen::Index>& windows) {
    for (std::size_t i = 0; i < procs.size(); ++i) {
        for (Eigen::Index w : windows) {
            const Eigen::MatrixXd& k = procs[i][static_cast<std::size_t>(w)];
            for (Eigen::Index a = 0; a < k.rows(); ++a) {
                for (Eigen::Index b = a; b < k.cols(); ++b) {
                    csv.field(method).field(static_cast<long>(i)).field(trials.trials[i].label).field(static_cast<long>(w));
                    csv.field(centers(w) / rate).field(static_cast<long>(a + 1)).field(static_cast<long>(b + 1)).field(k(a, b));
                    csv.end_row();
                }
            }
        }
    }
}

inline std::vector<std::string> log_cov_columns(Eigen::Index q) {
    std::vector<std::string> cols;
    for (Eigen::Index c = 0; c < q; ++c) cols.push_back("y" + std::to_string(c + 1));
    return cols;
}

inline std::vector<std::string> trial_labels(const TrialSet& set) { return set.labels(); }

inline std::vector<std::string> conditions_in(const std::vector<std::string>& labels,
                                              const std::vector<std::string>& wanted) {
    std::vector<std::string> out;
    for (const auto& l : labels)
        if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
    if (wanted.empty()) return out;
    for (const auto& w : wanted) {
        if (std::find(out.begin(), out.end(), w) == out.end()) {
            throw Error(ErrorCode::MissingLabel, "condition '" + w + "' not present in the data");
        }
    }
    return wanted;
}

inline const LatentTrajectory& find_traj(const std::vector<LatentTrajectory>& all, const std::string& c) {
    for (const auto& t : all)
        if (t.condition == c) return t;
    throw Error(ErrorCode::MissingLabel, "no trajectory for condition '" + c + "'");
}

inline void trajectory_rows(CsvBuilder& csv, const LatentTrajectory& t, const Eigen::VectorXd& grid, double rate) {
    std::vector<double> buf(static_cast<std::size_t>(t.draws.rows()));
    for (Eigen::Index w = 0; w < t.windows; ++w) {
        for (Eigen::Index j = 0; j < t.factors; ++j) {
            for (Eigen::Index d = 0; d < t.draws.rows(); ++d) buf[static_cast<std::size_t>(d)] = t.draws(d, w * t.factors + j);
            const Band b = band(buf);
            csv.field(t.condition).field(static_cast<long>(w)).field(grid(w) / rate).field(static_cast<long>(j + 1));
            csv.field(b.median).field(b.lower).field(b.upper);
            csv.end_row();
        }
    }
}

/// Trajectory, separation-report and separation-curve files for a fitted chain.
inline void separation_outputs(const ChainDraws& chain, const std::vector<std::string>& labels, const RunConfig& cfg,
                               double rate, const Stamp& st, OutputSet& out) {
    const EvaluationConfig& ev = cfg.evaluation;
    const std::vector<std::string> conds = conditions_in(labels, ev.conditions);
    const std::vector<LatentTrajectory> trajs = extract_trajectories(chain, labels);

    CsvBuilder traj = st.csv({"condition", "window", "time_s", "factor", "median", "lower", "upper"});
    for (const auto& c : conds) trajectory_rows(traj, find_traj(trajs, c), chain.grid, rate);
    out.add("trajectories.csv", traj.str());

    SeparationOptions so;
    so.k = ev.k;
    so.l2 = ev.l2;
    so.threads = cfg.threads;
    CsvBuilder rep = st.csv({"comparison", "condition_a", "condition_b", "classifier", "accuracy_mean", "accuracy_sd",
                             "folds"});
    CsvBuilder curve = st.csv({"condition_a", "condition_b", "window", "time_s", "separation"});
    std::uint64_t job = 0;
    auto score = [&](const std::string& kind, const LatentTrajectory& a, const LatentTrajectory& b) {
        for (Classifier c : ev.classifiers) {
            Rng rng(derive_seed(st.seed, stream::kClassify, job++));
            const SeparationReport r = separation_score(a, b, c, ev.folds, rng, so);
            rep.field(kind).field(a.condition).field(b.condition).field(classifier_name(c));
            rep.field(r.accuracy_mean).field(r.accuracy_sd).field(r.folds);
            rep.end_row();
        }
    };
    for (std::size_t x = 0; x < conds.size(); ++x) {
        for (std::size_t y = x + 1; y < conds.size(); ++y) {
            const LatentTrajectory& a = find_traj(trajs, conds[x]);
            const LatentTrajectory& b = find_traj(trajs, conds[y]);
            score("different", a, b);
            const Eigen::VectorXd s = separation_curve(a, b);
            for (Eigen::Index w = 0; w < s.size(); ++w) {
                curve.field(a.condition).field(b.condition).field(static_cast<long>(w)).field(chain.grid(w) / rate);
                curve.field(s(w)).end_row();
            }
        }
    }
    if (ev.same_condition_splits) {
        for (std::size_t x = 0; x < conds.size(); ++x) {
            const auto members = std::count(labels.begin(), labels.end(), conds[x]);
            if (members < 4) continue;
            Rng rng(derive_seed(st.seed, stream::kSplit, x));
            const std::vector<std::string> split = split_condition(labels, conds[x], rng);
            const std::vector<LatentTrajectory> halves = extract_trajectories(chain, split);
            score("same", find_traj(halves, conds[x] + "#1"), find_traj(halves, conds[x] + "#2"));
        }
    }
    out.add("separation.csv", rep.str());
    out.add("separation_curve.csv", curve.str());
}

inline bool labels_allow_trajectories(const std::vector<std::string>& labels) {
    for (const auto& l : labels)
        if (std::count(labels.begin(), labels.end(), l) < 2) return false;
    return true;
}

inline void factor_rows(CsvBuilder& csv, const ChainDraws& chain, const TrialSet& trials, double rate) {
    const std::size_t n = chain.states.front().factors.size();
    const Eigen::Index tw = chain.grid.size();
    const Eigen::Index r = chain.states.front().factor_count();
    std::vector<double> buf(chain.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (Eigen::Index w = 0; w < tw; ++w) {
            for (Eigen::Index j = 0; j < r; ++j) {
                for (std::size_t d = 0; d < chain.size(); ++d) buf[d] = chain.states[d].factors[i](w, j);
                const Band b = band(buf);
                csv.field(static_cast<long>(i)).field(trials.trials[i].label).field(static_cast<long>(w));
                csv.field(chain.grid(w) / rate).field(static_cast<long>(j + 1));
                csv.field(b.median).field(b.lower).field(b.upper).end_row();
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands

/// simulate: synthetic trial files plus the generating log-covariance paths.
[[nodiscard]] inline OutputSet run_simulate(const RunConfig& cfg) {
    const detail::Stamp st = detail::stamp_of(cfg);
    const SimulatedData sim = simulate_conditions(cfg.simulate, st.seed);
    OutputSet out;
    out.add_all(trial_files(sim.trials, st.seed, st.hash));
    const Eigen::Index q = triangular_number(cfg.simulate.p);
    std::vector<std::string> cols{"condition", "sample", "time_s"};
    for (const auto& c : detail::log_cov_columns(q)) cols.push_back(c);
    CsvBuilder truth = st.csv(cols);
    for (std::size_t c = 0; c < sim.truth.size(); ++c) {
        const Eigen::MatrixXd l = sim.truth[c].log_cov();
        for (Eigen::Index t = 0; t < l.rows(); ++t) {
            truth.field(sim.conditions[c]).field(static_cast<long>(t)).field(static_cast<double>(t) / cfg.simulate.sample_rate_hz);
            for (Eigen::Index k = 0; k < q; ++k) truth.field(l(t, k));
            truth.end_row();
        }
    }
    out.add("truth_logcov.csv", truth.str());
    return out;
}

/// estimate: sliding-window log-covariance series and covariance snapshots.
[[nodiscard]] inline OutputSet run_estimate(const RunConfig& cfg) {
    const detail::Stamp st = detail::stamp_of(cfg);
    const detail::Prepared prep = detail::prepare(cfg);
    OutputSet out;
    std::vector<std::string> cols{"trial", "label", "window", "time_s"};
    for (const auto& c : detail::log_cov_columns(prep.full.q())) cols.push_back(c);
    CsvBuilder series = st.csv(cols);
    for (Eigen::Index i = 0; i < prep.full.n(); ++i) {
        const Eigen::MatrixXd& y = prep.full.values[static_cast<std::size_t>(i)];
        for (Eigen::Index w = 0; w < y.rows(); ++w) {
            series.field(static_cast<long>(i)).field(prep.trials.trials[static_cast<std::size_t>(i)].label);
            series.field(static_cast<long>(w)).field(prep.full.time_index(w) / prep.rate);
            for (Eigen::Index k = 0; k < y.cols(); ++k) series.field(y(w, k));
            series.end_row();
        }
    }
    out.add("sw_logcov.csv", series.str());
    std::vector<CovarianceProcess> procs;
    for (const auto& y : prep.full.values) procs.push_back(covariance_from_log_rows(y));
    CsvBuilder grid = st.csv({"method", "trial", "label", "window", "time_s", "i", "j", "value"});
    detail::covariance_rows(grid, "SW", procs, prep.trials, prep.full.time_index, prep.rate,
                            detail::snapshot_rows(prep.full.windows(), cfg.estimator.snapshots));
    out.add("covariance_grid.csv", grid.str());
    return out;
}

/// fit: the full pipeline from raw trials to a chain file, posterior-median
/// covariances, factor paths with credible bands, condition trajectories and
/// the separation report (when the labels allow it).
[[nodiscard]] inline OutputSet run_pipeline(const RunConfig& cfg) {
    const detail::Stamp st = detail::stamp_of(cfg);
    const detail::Prepared prep = detail::prepare(cfg);
    const ChainDraws chain = gibbs_run(prep.series, detail::fit_model_config(cfg));
    OutputSet out;
    out.add("chain.bin", serialize_chain(chain, fit_hash(cfg)));

    const std::vector<CovarianceProcess> median = reconstruct_covariance(chain);
    const Eigen::Index tw = prep.series.windows();
    std::vector<Eigen::Index> all(static_cast<std::size_t>(tw));
    for (Eigen::Index w = 0; w < tw; ++w) all[static_cast<std::size_t>(w)] = w;
    CsvBuilder med = st.csv({"method", "trial", "label", "window", "time_s", "i", "j", "value"});
    detail::covariance_rows(med, "LFGP", median, prep.trials, prep.series.time_index, prep.rate, all);
    out.add("posterior_median_cov.csv", med.str());

    std::vector<CovarianceProcess> sw;
    for (const auto& y : prep.series.values) sw.push_back(covariance_from_log_rows(y));
    const std::vector<Eigen::Index> snaps = detail::snapshot_rows(tw, cfg.estimator.snapshots);
    CsvBuilder grid = st.csv({"method", "trial", "label", "window", "time_s", "i", "j", "value"});
    detail::covariance_rows(grid, "SW", sw, prep.trials, prep.series.time_index, prep.rate, snaps);
    detail::covariance_rows(grid, "LFGP", median, prep.trials, prep.series.time_index, prep.rate, snaps);
    out.add("covariance_grid.csv", grid.str());

    CsvBuilder factors = st.csv({"trial", "label", "window", "time_s", "factor", "median", "lower", "upper"});
    detail::factor_rows(factors, chain, prep.trials, prep.rate);
    out.add("factors.csv", factors.str());

    const std::vector<std::string> labels = prep.trials.labels();
    if (detail::labels_allow_trajectories(labels)) {
        detail::separation_outputs(chain, labels, cfg, prep.rate, st, out);
    }

    CsvBuilder summary = st.csv({"key", "value"});
    auto put = [&](const std::string& k, double v) { summary.field(k).field(v).end_row(); };
    put("trials", static_cast<double>(prep.series.n()));
    put("channels", static_cast<double>(prep.trials.trials.front().channels()));
    put("window_len", prep.taper.window_len);
    put("windows", static_cast<double>(tw));
    put("q", static_cast<double>(prep.series.q()));
    put("factors", static_cast<double>(chain.states.front().factor_count()));
    put("draws", static_cast<double>(chain.size()));
    put("variance_explained", variance_explained(prep.series, chain));
    std::vector<double> s2;
    for (const auto& s : chain.states) s2.push_back(s.sigma2);
    put("sigma2_median", detail::quantile(s2, 0.5));
    for (Eigen::Index j = 0; j < chain.accept_rate_theta.size(); ++j) {
        std::vector<double> th;
        for (const auto& s : chain.states) th.push_back(s.theta(j));
        put("theta" + std::to_string(j + 1) + "_median", detail::quantile(th, 0.5));
        put("theta" + std::to_string(j + 1) + "_accept", chain.accept_rate_theta(j));
    }
    out.add("summary.csv", summary.str());
    return out;
}

/// addfactor: one extra horseshoe factor on top of a saved chain.
[[nodiscard]] inline OutputSet run_addfactor(const RunConfig& cfg) {
    const detail::Stamp st = detail::stamp_of(cfg);
    const LoadedChain base = load_chain(cfg.chain_path(), fit_hash(cfg));
    const detail::Prepared prep = detail::prepare(cfg);
    Rng rng(derive_seed(st.seed, stream::kHorseshoe));
    const ChainDraws ext = add_factor_horseshoe(prep.series, base.draws, cfg.model, rng);
    OutputSet out;
    out.add("chain_horseshoe.bin", serialize_chain(ext, fit_hash(cfg)));

    const Eigen::Index r = ext.states.front().factor_count();
    const Eigen::Index q = ext.states.front().loadings.cols();
    const Eigen::Index p = static_cast<Eigen::Index>(std::lround((std::sqrt(8.0 * static_cast<double>(q) + 1.0) - 1.0) / 2.0));
    CsvBuilder load = st.csv({"factor", "element", "i", "j", "median", "lower", "upper", "interval_contains_zero", "horseshoe"});
    std::vector<double> buf(ext.size());
    std::vector<double> real_abs, new_abs;
    int zero_count = 0;
    for (Eigen::Index k = 0; k < r; ++k) {
        Eigen::Index e = 0;
        for (Eigen::Index a = 0; a < p; ++a) {
            for (Eigen::Index b = a; b < p; ++b, ++e) {
                for (std::size_t d = 0; d < ext.size(); ++d) buf[d] = ext.states[d].loadings(k, e);
                const detail::Band bd = detail::band(buf);
                const bool contains = bd.lower <= 0.0 && bd.upper >= 0.0;
                const bool hs = k == r - 1;
                (hs ? new_abs : real_abs).push_back(std::abs(bd.median));
                if (hs && contains) ++zero_count;
                load.field(static_cast<long>(k + 1)).field(static_cast<long>(e + 1)).field(static_cast<long>(a + 1));
                load.field(static_cast<long>(b + 1)).field(bd.median).field(bd.lower).field(bd.upper);
                load.field(contains ? 1 : 0).field(hs ? 1 : 0).end_row();
            }
        }
    }
    out.add("loadings.csv", load.str());
    CsvBuilder summary = st.csv({"key", "value"});
    summary.field("factors").field(static_cast<long>(r)).end_row();
    summary.field("new_factor_median_abs_loading").field(detail::quantile(new_abs, 0.5)).end_row();
    summary.field("real_factor_median_abs_loading")
        .field(real_abs.empty() ? 0.0 : detail::quantile(real_abs, 0.5))
        .end_row();
    summary.field("new_factor_intervals_containing_zero").field(zero_count).end_row();
    summary.field("new_factor_elements").field(static_cast<long>(q)).end_row();
    out.add("horseshoe_summary.csv", summary.str());
    return out;
}

/// separate: trajectories and classifier separation from a saved chain.
[[nodiscard]] inline OutputSet run_separate(const RunConfig& cfg) {
    const detail::Stamp st = detail::stamp_of(cfg);
    const LoadedChain chain = load_chain(cfg.chain_path(), fit_hash(cfg));
    const TrialSet trials = load_trials(cfg.data_dir());
    OutputSet out;
    detail::separation_outputs(chain.draws, trials.labels(), cfg, trials.trials.front().sample_rate_hz, st, out);
    return out;
}

/// baseline: SW-PCA and HMM reconstructions, HMM state paths and proportions.
[[nodiscard]] inline OutputSet run_baseline(const RunConfig& cfg) {
    const detail::Stamp st = detail::stamp_of(cfg);
    const detail::Prepared prep = detail::prepare(cfg);
    const BaselineConfig& bc = cfg.baseline;
    const std::vector<Eigen::Index> snaps = detail::snapshot_rows(prep.full.windows(), cfg.estimator.snapshots);
    CsvBuilder grid = st.csv({"method", "trial", "label", "window", "time_s", "i", "j", "value"});
    OutputSet out;
    const auto wants = [&](const char* m) { return std::find(bc.methods.begin(), bc.methods.end(), m) != bc.methods.end(); };

    if (wants("SW-PCA")) {
        const PcaBasis basis = sw_pca_fit(prep.full, bc.pca_k);
        detail::covariance_rows(grid, "SW-PCA", sw_pca_reconstruct(prep.full, basis), prep.trials,
                                prep.full.time_index, prep.rate, snaps);
        CsvBuilder pca = st.csv({"component", "eigenvalue", "cumulative_explained"});
        const double total = basis.eigenvalues.sum();
        double run = 0.0;
        for (Eigen::Index c = 0; c < basis.eigenvalues.size(); ++c) {
            run += basis.eigenvalues(c);
            pca.field(static_cast<long>(c + 1)).field(basis.eigenvalues(c)).field(total > 0.0 ? run / total : 0.0).end_row();
        }
        out.add("pca_variance.csv", pca.str());
    }
    if (wants("HMM")) {
        HmmOptions opts = bc.hmm;
        opts.threads = cfg.threads;
        opts.zero_mean = bc.raw;
        Sequences seqs;
        if (bc.raw) {
            for (const auto& tr : prep.trials.trials) seqs.push_back(tr.samples);
        } else {
            seqs = prep.full.values;
        }
        Rng rng(derive_seed(st.seed, stream::kHmm));
        const HmmFit fit = hmm_fit_largest(seqs, bc.hmm_states, opts, rng);
        if (!bc.raw) {
            detail::covariance_rows(grid, "HMM", hmm_reconstruct(fit.model, prep.full), prep.trials,
                                    prep.full.time_index, prep.rate, snaps);
        }
        CsvBuilder states = st.csv({"trial", "label", "step", "time_s", "state"});
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            const std::vector<int> path = hmm_viterbi(fit.model, seqs[i]);
            for (std::size_t t = 0; t < path.size(); ++t) {
                const double time = bc.raw ? static_cast<double>(t) / prep.rate
                                           : prep.full.time_index(static_cast<Eigen::Index>(t)) / prep.rate;
                states.field(static_cast<long>(i)).field(prep.trials.trials[i].label).field(static_cast<long>(t));
                states.field(time).field(path[t] + 1).end_row();
            }
        }
        out.add("hmm_states.csv", states.str());
        CsvBuilder props = st.csv({"condition", "state", "proportion"});
        for (const auto& cp : hmm_state_proportions(fit.model, seqs, prep.trials.labels())) {
            for (Eigen::Index s = 0; s < cp.proportions.size(); ++s) {
                props.field(cp.condition).field(static_cast<long>(s + 1)).field(cp.proportions(s)).end_row();
            }
        }
        out.add("hmm_proportions.csv", props.str());
        CsvBuilder trace = st.csv({"iteration", "objective"});
        for (std::size_t k = 0; k < fit.trace.size(); ++k) trace.field(static_cast<long>(k)).field(fit.trace[k]).end_row();
        out.add("hmm_trace.csv", trace.str());
        if (!bc.aic_states.empty()) {
            Rng arng(derive_seed(st.seed, stream::kHmm, 1));
            CsvBuilder aic = st.csv({"states", "aic", "log_likelihood", "params"});
            for (const auto& pt : hmm_elbow(seqs, bc.aic_states, opts, arng)) {
                aic.field(pt.states).field(pt.aic).field(pt.log_likelihood).field(pt.params).end_row();
            }
            out.add("hmm_aic.csv", aic.str());
        }
    }
    out.add("baseline_covariance_grid.csv", grid.str());
    return out;
}

/// bench: the method-comparison and/or posterior-contraction harnesses.
[[nodiscard]] inline OutputSet run_bench(const RunConfig& cfg) {
    const detail::Stamp st = detail::stamp_of(cfg);
    const ExperimentConfig& ex = cfg.experiment;
    OutputSet out;
    if (ex.kind != BenchKind::Contraction) {
        ComparisonSettings cs = ex.comparison;
        cs.seed = derive_seed(st.seed, stream::kComparison);
        cs.threads = cfg.threads;
        std::vector<DynamicsScenario> scenarios;
        for (DynamicsKind k : ex.scenarios) {
            DynamicsScenario sc;
            sc.kind = k;
            sc.T = ex.T;
            sc.r_true = ex.r_true;
            sc.knots = ex.knots;
            scenarios.push_back(sc);
        }
        const ComparisonResult res = comparison_experiment(scenarios, ex.n_reps, cs);
        CsvBuilder rows = st.csv({"scenario", "method", "replicate", "seed", "loss"});
        for (const auto& r : res.rows) {
            rows.field(r.scenario).field(r.method).field(r.replicate).field(std::to_string(r.seed)).field(r.loss).end_row();
        }
        out.add("comparison.csv", rows.str());
        CsvBuilder sum = st.csv({"scenario", "method", "median", "sd", "replicates"});
        for (const auto& s : res.summaries) {
            sum.field(s.scenario).field(s.method).field(s.median).field(s.sd).field(s.replicates).end_row();
        }
        out.add("comparison_summary.csv", sum.str());
    }
    if (ex.kind != BenchKind::Comparison) {
        ContractionSettings ks = ex.contraction;
        ks.seed = derive_seed(st.seed, stream::kContraction);
        ks.threads = cfg.threads;
        CsvBuilder rows = st.csv({"n", "t", "mse", "posterior_variance", "replicates", "seed"});
        for (const auto& r : contraction_experiment(ex.cells, ks)) {
            rows.field(r.n).field(r.t).field(r.mse).field(r.posterior_variance).field(r.replicates);
            rows.field(std::to_string(r.seed)).end_row();
        }
        out.add("contraction.csv", rows.str());
    }
    return out;
}

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"estimate", "fit", "addfactor", "simulate", "bench", "separate", "baseline"};
    return names;
}

[[nodiscard]] inline OutputSet run_command(const std::string& name, const RunConfig& cfg) {
    if (name == "estimate") return run_estimate(cfg);
    if (name == "fit") return run_pipeline(cfg);
    if (name == "addfactor") return run_addfactor(cfg);
    if (name == "simulate") return run_simulate(cfg);
    if (name == "bench") return run_bench(cfg);
    if (name == "separate") return run_separate(cfg);
    if (name == "baseline") return run_baseline(cfg);
    throw Error(ErrorCode::ConfigError, "unknown command '" + name + "'");
}

/// Runs a subcommand and commits its outputs to cfg.io.out_dir.
inline OutputSet execute(const std::string& name, const RunConfig& cfg) {
    OutputSet out = run_command(name, cfg);
    out.commit(cfg.out_dir());
    return out;
}

}  // namespace lfgp
