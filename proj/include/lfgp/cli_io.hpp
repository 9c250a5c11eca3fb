#pragma once

// Run configuration, trial CSV ingestion, chain persistence and CSV output.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "lfgp/baselines.hpp"
#include "lfgp/error.hpp"
#include "lfgp/evaluation.hpp"
#include "lfgp/experiments.hpp"
#include "lfgp/sampler.hpp"
#include "lfgp/sw_estimator.hpp"

namespace lfgp {

namespace fs = std::filesystem;
using Json = nlohmann::json;

/// 64-bit FNV-1a.
[[nodiscard]] inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

[[nodiscard]] inline std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Shortest decimal form that parses back to the same double.
[[nodiscard]] inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Configuration

struct IoConfig {
    std::optional<std::uint64_t> seed;
    std::string data_dir;
    std::string chain;     // defaults to <out>/chain.bin
    std::string out_dir = ".";
};

struct EstimatorConfig {
    std::optional<int> window_len;
    std::optional<double> window_ms;
    double taper_scale = 0.5;
    bool center = true;
    double jitter = 1e-6;
    int stride = 1;        // keep every stride-th window for the fit
    int snapshots = 5;     // windows exported in covariance_grid.csv

    /// Window length in samples, converting window_ms with the trial sample rate.
    [[nodiscard]] TaperSpec taper(double sample_rate_hz) const {
        TaperSpec t;
        t.taper_scale = taper_scale;
        if (window_ms) {
            t.window_len = static_cast<int>(std::lround(*window_ms * sample_rate_hz / 1000.0));
        } else if (window_len) {
            t.window_len = *window_len;
        }
        if (t.window_len < 2) throw Error(ErrorCode::ConfigError, "window length must be at least 2 samples");
        return t;
    }
};

struct EvaluationConfig {
    std::vector<Classifier> classifiers{Classifier::Knn, Classifier::Logistic};
    int k = 5;
    int folds = 5;
    double l2 = 1.0;
    std::vector<std::string> conditions;  // empty: every condition present
    bool same_condition_splits = true;
};

enum class BenchKind { Comparison, Contraction, All };

struct ExperimentConfig {
    BenchKind kind = BenchKind::Comparison;
    std::vector<DynamicsKind> scenarios{DynamicsKind::SquareWave, DynamicsKind::PiecewiseLinear,
                                        DynamicsKind::CubicSpline};
    int n_reps = 20;
    int T = 1000;
    int r_true = 4;
    int knots = 6;
    ComparisonSettings comparison;
    std::vector<ContractionCell> cells{{1, 25}, {1, 50}, {10, 25}, {10, 50}};
    ContractionSettings contraction;
};

struct ConditionSpec {
    std::string label;
    int trials = 1;
};

struct SimulateConfig {
    DynamicsKind scenario = DynamicsKind::CubicSpline;
    int p = 3;
    int T = 200;
    int r_true = 2;
    int knots = 6;
    double amplitude = 1.0;
    double effect = 0.5;               // weight of the condition-specific dynamics
    double sample_rate_hz = 1000.0;
    TruthOptions truth;
    std::vector<ConditionSpec> conditions{{"sim", 2}};
};

struct BaselineConfig {
    std::vector<std::string> methods{"SW-PCA", "HMM"};
    int pca_k = 4;
    int hmm_states = 8;
    HmmOptions hmm;
    bool raw = false;                  // HMM on raw signals with zero-mean emissions
    std::vector<int> aic_states;       // non-empty: also write the AIC curve
};

struct RunConfig {
    IoConfig io;
    EstimatorConfig estimator;
    ModelConfig model;
    ExperimentConfig experiment;
    EvaluationConfig evaluation;
    SimulateConfig simulate;
    BaselineConfig baseline;
    fs::path base_dir = ".";           // relative paths resolve against this
    int threads = 1;

    [[nodiscard]] std::uint64_t seed() const {
        if (!io.seed) throw Error(ErrorCode::ConfigError, "no seed: set io.seed or pass --seed");
        return *io.seed;
    }
    [[nodiscard]] fs::path resolve(const std::string& p) const {
        const fs::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }
    [[nodiscard]] fs::path out_dir() const { return fs::path(io.out_dir); }
    [[nodiscard]] fs::path data_dir() const {
        if (io.data_dir.empty()) throw Error(ErrorCode::ConfigError, "io.data_dir is required");
        return resolve(io.data_dir);
    }
    [[nodiscard]] fs::path chain_path() const {
        return io.chain.empty() ? out_dir() / "chain.bin" : resolve(io.chain);
    }
};

namespace detail {

/// Reads known keys of one JSON object and rejects anything else.
class Section {
public:
    Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw Error(ErrorCode::ConfigError, "'" + name_ + "' must be an object");
    }

    template <class T>
    bool get(const std::string& key, T& out) {
        known_.insert(key);
        if (!j_.contains(key)) return false;
        try {
            out = j_.at(key).get<T>();
        } catch (const Json::exception& e) {
            throw Error(ErrorCode::ConfigError, name_ + "." + key + ": " + e.what());
        }
        return true;
    }

    template <class T>
    bool get(const std::string& key, std::optional<T>& out) {
        T v{};
        if (!get(key, v)) return false;
        out = v;
        return true;
    }

    const Json* child(const std::string& key) {
        known_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    [[nodiscard]] std::string path(const std::string& key) const { return name_ + "." + key; }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!known_.count(item.key())) {
                throw Error(ErrorCode::ConfigError, "unknown key '" + name_ + "." + item.key() + "'");
            }
        }
    }

private:
    const Json& j_;
    std::string name_;
    std::set<std::string> known_;
};

inline void require(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::ConfigError, what);
}

inline void parse_model(const Json& j, const std::string& name, ModelConfig& m) {
    Section s(j, name);
    s.get("factors", m.factors);
    std::string kernel;
    if (s.get("kernel", kernel)) m.kernel = parse_kernel_family(kernel);
    double mode = m.ls_prior.mode();
    double shape = m.ls_prior.shape;
    const bool has_mode = s.get("length_scale_mode", mode);
    const bool has_shape = s.get("length_scale_shape", shape);
    if (has_mode || has_shape) {
        require(shape > 1.0 && mode > 0.0, name + ": need length_scale_shape > 1 and length_scale_mode > 0");
        m.ls_prior = LengthScalePrior::with_mode(mode, shape);
    }
    s.get("loading_prior_var", m.loading_prior_var);
    s.get("noise_shape", m.noise_shape);
    s.get("noise_rate", m.noise_rate);
    s.get("horseshoe_global_scale", m.horseshoe_global_scale);
    s.get("center", m.center);
    s.get("n_draws", m.mcmc.n_draws);
    s.get("n_burn", m.mcmc.n_burn);
    s.get("thin", m.mcmc.thin);
    s.get("proposal_sd", m.mcmc.proposal_sd);
    s.finish();
    m.validate();
}

inline Json model_json(const ModelConfig& m) {
    return Json{{"factors", m.factors},
                {"kernel", kernel_family_name(m.kernel)},
                {"length_scale_shape", m.ls_prior.shape},
                {"length_scale_rate", m.ls_prior.rate},
                {"loading_prior_var", m.loading_prior_var},
                {"noise_shape", m.noise_shape},
                {"noise_rate", m.noise_rate},
                {"horseshoe_global_scale", m.horseshoe_global_scale},
                {"center", m.center},
                {"n_draws", m.mcmc.n_draws},
                {"n_burn", m.mcmc.n_burn},
                {"thin", m.mcmc.thin},
                {"proposal_sd", m.mcmc.proposal_sd}};
}

inline void parse_io(const Json& j, IoConfig& io) {
    Section s(j, "io");
    s.get("seed", io.seed);
    s.get("data_dir", io.data_dir);
    s.get("chain", io.chain);
    s.get("out_dir", io.out_dir);
    s.finish();
}

inline void parse_estimator(const Json& j, EstimatorConfig& e) {
    Section s(j, "estimator");
    s.get("window_len", e.window_len);
    s.get("window_ms", e.window_ms);
    require(!(e.window_len && e.window_ms), "estimator: give window_len or window_ms, not both");
    s.get("taper_scale", e.taper_scale);
    s.get("center", e.center);
    s.get("jitter", e.jitter);
    s.get("stride", e.stride);
    s.get("snapshots", e.snapshots);
    s.finish();
    require(e.taper_scale > 0.0, "estimator.taper_scale must be positive");
    require(e.jitter >= 0.0, "estimator.jitter must be non-negative");
    require(e.stride >= 1, "estimator.stride must be >= 1");
    require(e.snapshots >= 1, "estimator.snapshots must be >= 1");
    require(!e.window_ms || *e.window_ms > 0.0, "estimator.window_ms must be positive");
}

inline void parse_evaluation(const Json& j, EvaluationConfig& ev) {
    Section s(j, "evaluation");
    std::vector<std::string> names;
    if (s.get("classifiers", names)) {
        require(!names.empty(), "evaluation.classifiers is empty");
        ev.classifiers.clear();
        for (const auto& n : names) ev.classifiers.push_back(parse_classifier(n));
    }
    s.get("k", ev.k);
    s.get("folds", ev.folds);
    s.get("l2", ev.l2);
    s.get("conditions", ev.conditions);
    s.get("same_condition_splits", ev.same_condition_splits);
    s.finish();
    require(ev.k >= 1, "evaluation.k must be >= 1");
    require(ev.folds >= 2, "evaluation.folds must be >= 2");
    require(ev.l2 >= 0.0, "evaluation.l2 must be non-negative");
}

inline void parse_experiment(const Json& j, ExperimentConfig& ex) {
    Section s(j, "experiment");
    std::string kind;
    if (s.get("kind", kind)) {
        if (kind == "comparison") ex.kind = BenchKind::Comparison;
        else if (kind == "contraction") ex.kind = BenchKind::Contraction;
        else if (kind == "all") ex.kind = BenchKind::All;
        else throw Error(ErrorCode::ConfigError, "experiment.kind must be comparison, contraction or all");
    }
    std::vector<std::string> scen;
    if (s.get("scenarios", scen)) {
        require(!scen.empty(), "experiment.scenarios is empty");
        ex.scenarios.clear();
        for (const auto& n : scen) ex.scenarios.push_back(parse_dynamics_kind(n));
    }
    auto& c = ex.comparison;
    s.get("n_reps", ex.n_reps);
    s.get("T", ex.T);
    s.get("r_true", ex.r_true);
    s.get("knots", ex.knots);
    s.get("p", c.p);
    s.get("n_trials", c.n_trials);
    s.get("window_len", c.taper.window_len);
    s.get("taper_scale", c.taper.taper_scale);
    s.get("pca_k", c.pca_k);
    s.get("hmm_max_states", c.hmm_max_states);
    s.get("hmm_restarts", c.hmm.restarts);
    s.get("stride", c.stride);
    s.get("methods", c.methods);
    if (const Json* m = s.child("comparison_model")) parse_model(*m, s.path("comparison_model"), c.model);

    if (const Json* cells = s.child("cells")) {
        require(cells->is_array() && !cells->empty(), "experiment.cells must be a non-empty array");
        ex.cells.clear();
        for (std::size_t i = 0; i < cells->size(); ++i) {
            Section cell((*cells)[i], "experiment.cells[" + std::to_string(i) + "]");
            ContractionCell cc;
            cell.get("n", cc.n);
            cell.get("t", cc.t);
            cell.finish();
            require(cc.n >= 1 && cc.t >= 2, "contraction cells need n >= 1 and t >= 2");
            ex.cells.push_back(cc);
        }
    }
    auto& k = ex.contraction;
    s.get("replicates", k.replicates);
    int cp = static_cast<int>(k.p);
    if (s.get("contraction_p", cp)) k.p = cp;
    s.get("contraction_r_true", k.r_true);
    s.get("contraction_sigma2", k.sigma2);
    s.get("contraction_theta", k.theta);
    if (const Json* m = s.child("contraction_model")) parse_model(*m, s.path("contraction_model"), k.model);
    s.finish();

    require(ex.n_reps >= 1, "experiment.n_reps must be >= 1");
    require(c.p >= 2 && c.n_trials >= 1, "experiment: need p >= 2 and n_trials >= 1");
    require(c.pca_k >= 1 && c.hmm_max_states >= 1 && c.hmm.restarts >= 1 && c.stride >= 1,
            "experiment: pca_k, hmm_max_states, hmm_restarts and stride must be >= 1");
    require(c.taper.window_len >= 2 && c.taper.taper_scale > 0.0, "experiment: bad taper");
    require(c.taper.window_len <= ex.T, "experiment.window_len exceeds T");
    for (const auto& m : c.methods) {
        require(m == "SW" || m == "SW-PCA" || m == "HMM" || m == "LFGP", "unknown comparison method '" + m + "'");
    }
    require(k.replicates >= 1 && k.p >= 1 && k.r_true >= 1, "experiment: contraction sizes must be >= 1");
    require(k.sigma2 > 0.0 && k.theta > 0.0, "experiment: contraction sigma2 and theta must be positive");
    DynamicsScenario probe;
    probe.T = ex.T;
    probe.r_true = ex.r_true;
    probe.knots = ex.knots;
    probe.validate();
}

inline void parse_simulate(const Json& j, SimulateConfig& sim) {
    Section s(j, "simulate");
    std::string scen;
    if (s.get("scenario", scen)) sim.scenario = parse_dynamics_kind(scen);
    s.get("p", sim.p);
    s.get("T", sim.T);
    s.get("r_true", sim.r_true);
    s.get("knots", sim.knots);
    s.get("amplitude", sim.amplitude);
    s.get("effect", sim.effect);
    s.get("sample_rate_hz", sim.sample_rate_hz);
    s.get("max_log_entry", sim.truth.max_log_entry);
    s.get("max_condition", sim.truth.max_condition);
    if (const Json* conds = s.child("conditions")) {
        require(conds->is_array() && !conds->empty(), "simulate.conditions must be a non-empty array");
        sim.conditions.clear();
        for (std::size_t i = 0; i < conds->size(); ++i) {
            Section c((*conds)[i], "simulate.conditions[" + std::to_string(i) + "]");
            ConditionSpec cs;
            c.get("label", cs.label);
            c.get("trials", cs.trials);
            c.finish();
            require(!cs.label.empty() && cs.trials >= 1, "simulate conditions need a label and trials >= 1");
            require(cs.label.find_first_of("/\\") == std::string::npos, "condition labels cannot contain slashes");
            sim.conditions.push_back(cs);
        }
    }
    s.finish();
    require(sim.p >= 1, "simulate.p must be >= 1");
    require(sim.sample_rate_hz > 0.0, "simulate.sample_rate_hz must be positive");
    require(sim.effect >= 0.0, "simulate.effect must be non-negative");
    require(sim.truth.max_log_entry > 0.0 && sim.truth.max_condition > 1.0, "simulate: bad truth bounds");
}

inline void parse_baseline(const Json& j, BaselineConfig& b) {
    Section s(j, "baseline");
    s.get("methods", b.methods);
    s.get("pca_k", b.pca_k);
    s.get("hmm_states", b.hmm_states);
    s.get("hmm_restarts", b.hmm.restarts);
    s.get("hmm_max_iter", b.hmm.max_iter);
    s.get("hmm_tol", b.hmm.tol);
    s.get("hmm_ridge", b.hmm.ridge);
    s.get("raw", b.raw);
    s.get("aic_states", b.aic_states);
    s.finish();
    require(!b.methods.empty(), "baseline.methods is empty");
    for (const auto& m : b.methods) require(m == "SW-PCA" || m == "HMM", "unknown baseline method '" + m + "'");
    require(b.pca_k >= 1 && b.hmm_states >= 1 && b.hmm.restarts >= 1 && b.hmm.max_iter >= 1,
            "baseline sizes must be >= 1");
    for (int v : b.aic_states) require(v >= 1, "baseline.aic_states entries must be >= 1");
}

}  // namespace detail

/// Parses a JSON document with optional sections io, estimator, model,
/// experiment, evaluation, simulate and baseline. Unknown keys are errors.
[[nodiscard]] inline RunConfig parse_config(const Json& j, const fs::path& base_dir = ".") {
    RunConfig cfg;
    cfg.base_dir = base_dir;
    detail::Section top(j, "config");
    if (const Json* v = top.child("io")) detail::parse_io(*v, cfg.io);
    if (const Json* v = top.child("estimator")) detail::parse_estimator(*v, cfg.estimator);
    if (const Json* v = top.child("model")) detail::parse_model(*v, "model", cfg.model);
    if (const Json* v = top.child("experiment")) detail::parse_experiment(*v, cfg.experiment);
    if (const Json* v = top.child("evaluation")) detail::parse_evaluation(*v, cfg.evaluation);
    if (const Json* v = top.child("simulate")) detail::parse_simulate(*v, cfg.simulate);
    if (const Json* v = top.child("baseline")) detail::parse_baseline(*v, cfg.baseline);
    top.finish();
    return cfg;
}

[[nodiscard]] inline RunConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    Json j;
    try {
        j = Json::parse(ss.str());
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
    }
    return parse_config(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

/// Canonical form of everything that can change results (paths, output
/// location and thread count excluded).
[[nodiscard]] inline Json canonical_config(const RunConfig& c) {
    Json j;
    j["seed"] = c.io.seed ? Json(*c.io.seed) : Json(nullptr);
    const auto& e = c.estimator;
    j["estimator"] = {{"window_len", e.window_len ? Json(*e.window_len) : Json(nullptr)},
                      {"window_ms", e.window_ms ? Json(*e.window_ms) : Json(nullptr)},
                      {"taper_scale", e.taper_scale},
                      {"center", e.center},
                      {"jitter", e.jitter},
                      {"stride", e.stride},
                      {"snapshots", e.snapshots}};
    j["model"] = detail::model_json(c.model);
    const auto& ex = c.experiment;
    Json scen = Json::array();
    for (auto k : ex.scenarios) scen.push_back(dynamics_kind_name(k));
    Json cells = Json::array();
    for (const auto& cell : ex.cells) cells.push_back({cell.n, cell.t});
    const auto& cs = ex.comparison;
    const auto& ks = ex.contraction;
    j["experiment"] = {{"kind", static_cast<int>(ex.kind)},
                       {"scenarios", scen},
                       {"n_reps", ex.n_reps},
                       {"T", ex.T},
                       {"r_true", ex.r_true},
                       {"knots", ex.knots},
                       {"p", cs.p},
                       {"n_trials", cs.n_trials},
                       {"window_len", cs.taper.window_len},
                       {"taper_scale", cs.taper.taper_scale},
                       {"pca_k", cs.pca_k},
                       {"hmm_max_states", cs.hmm_max_states},
                       {"hmm_restarts", cs.hmm.restarts},
                       {"stride", cs.stride},
                       {"methods", cs.methods},
                       {"comparison_model", detail::model_json(cs.model)},
                       {"cells", cells},
                       {"replicates", ks.replicates},
                       {"contraction_p", ks.p},
                       {"contraction_r_true", ks.r_true},
                       {"contraction_sigma2", ks.sigma2},
                       {"contraction_theta", ks.theta},
                       {"contraction_model", detail::model_json(ks.model)}};
    const auto& ev = c.evaluation;
    Json cls = Json::array();
    for (auto k : ev.classifiers) cls.push_back(classifier_name(k));
    j["evaluation"] = {{"classifiers", cls},       {"k", ev.k},
                       {"folds", ev.folds},         {"l2", ev.l2},
                       {"conditions", ev.conditions}, {"same_condition_splits", ev.same_condition_splits}};
    const auto& s = c.simulate;
    Json conds = Json::array();
    for (const auto& cd : s.conditions) conds.push_back({cd.label, cd.trials});
    j["simulate"] = {{"scenario", dynamics_kind_name(s.scenario)},
                     {"p", s.p},
                     {"T", s.T},
                     {"r_true", s.r_true},
                     {"knots", s.knots},
                     {"amplitude", s.amplitude},
                     {"effect", s.effect},
                     {"sample_rate_hz", s.sample_rate_hz},
                     {"max_log_entry", s.truth.max_log_entry},
                     {"max_condition", s.truth.max_condition},
                     {"conditions", conds}};
    const auto& b = c.baseline;
    j["baseline"] = {{"methods", b.methods},       {"pca_k", b.pca_k},
                     {"hmm_states", b.hmm_states}, {"hmm_restarts", b.hmm.restarts},
                     {"hmm_max_iter", b.hmm.max_iter}, {"hmm_tol", b.hmm.tol},
                     {"hmm_ridge", b.hmm.ridge},   {"raw", b.raw},
                     {"aic_states", b.aic_states}};
    return j;
}

/// Hash of the whole canonical config; stamped on every output file.
[[nodiscard]] inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(canonical_config(c).dump()); }

/// Hash of the parts that determine a fitted chain (seed, estimator, model).
[[nodiscard]] inline std::uint64_t fit_hash(const RunConfig& c) {
    const Json full = canonical_config(c);
    const Json part{{"seed", full["seed"]}, {"estimator", full["estimator"]}, {"model", full["model"]}};
    return fnv1a64(part.dump());
}

// ---------------------------------------------------------------------------
// Trial CSV files

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline bool parse_number(std::string_view s, double& out) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
}

inline Trial read_trial_csv(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorCode::ParseError, file.string() + ": cannot open");
    const std::string where = file.string() + ":";
    std::string line;
    long lineno = 0;
    Eigen::Index p = -1;
    std::vector<double> t;
    std::vector<double> values;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view view = trim(line);
        if (p < 0) {
            if (!view.empty() && view.front() == '#') continue;
            const auto fields = split_commas(view);
            bool ok = fields.size() >= 2 && fields[0] == "t";
            for (std::size_t c = 1; ok && c < fields.size(); ++c) ok = fields[c] == "ch" + std::to_string(c);
            if (!ok) {
                throw Error(ErrorCode::ParseError,
                            where + std::to_string(lineno) + ": expected header 't,ch1,...,chp'");
            }
            p = static_cast<Eigen::Index>(fields.size()) - 1;
            continue;
        }
        if (view.empty()) continue;
        const auto fields = split_commas(view);
        if (static_cast<Eigen::Index>(fields.size()) != p + 1) {
            throw Error(ErrorCode::ParseError, where + std::to_string(lineno) + ": expected " +
                                                   std::to_string(p + 1) + " fields, found " +
                                                   std::to_string(fields.size()));
        }
        for (std::size_t c = 0; c < fields.size(); ++c) {
            double v = 0.0;
            if (!parse_number(fields[c], v) || !std::isfinite(v)) {
                throw Error(ErrorCode::ParseError, where + std::to_string(lineno) + ": bad number '" +
                                                       std::string(fields[c]) + "' in column " +
                                                       std::to_string(c + 1));
            }
            if (c == 0) {
                if (!t.empty() && !(v > t.back())) {
                    throw Error(ErrorCode::ParseError, where + std::to_string(lineno) + ": t must increase");
                }
                t.push_back(v);
            } else {
                values.push_back(v);
            }
        }
    }
    if (p < 0) throw Error(ErrorCode::ParseError, where + std::to_string(std::max<long>(lineno, 1)) + ": missing header");
    Trial tr;
    const auto rows = static_cast<Eigen::Index>(t.size());
    tr.samples = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(), rows, p);
    if (rows >= 2) tr.sample_rate_hz = std::round(1e6 / (t[1] - t[0])) / 1e6;
    return tr;
}

}  // namespace detail

/// Reads every trial_<idx>_<label>.csv in dir (other files are ignored),
/// ordered by idx. Time stamps are in seconds.
[[nodiscard]] inline TrialSet load_trials(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::ConfigError, "data directory " + dir.string() + " not found");
    static const std::regex pattern(R"(trial_(\d+)_(.+)\.csv)");
    std::map<long long, std::pair<std::string, fs::path>> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        std::smatch m;
        if (!std::regex_match(name, m, pattern)) continue;
        const long long idx = std::stoll(m[1].str());
        if (!found.emplace(idx, std::make_pair(m[2].str(), entry.path())).second) {
            throw Error(ErrorCode::ParseError, name + ": duplicate trial index " + std::to_string(idx));
        }
    }
    if (found.empty()) throw Error(ErrorCode::RaggedTrials, "no trial_<idx>_<label>.csv files in " + dir.string());
    TrialSet set;
    for (const auto& [idx, item] : found) {
        Trial tr = detail::read_trial_csv(item.second);
        tr.label = item.first;
        set.trials.push_back(std::move(tr));
    }
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& tr = set.trials[i];
        if (tr.channels() != set.trials.front().channels() || tr.length() != set.trials.front().length()) {
            throw Error(ErrorCode::RaggedTrials, "trial " + std::to_string(i) + " (" + tr.label + ") has shape " +
                                                     std::to_string(tr.length()) + "x" +
                                                     std::to_string(tr.channels()) + ", expected " +
                                                     std::to_string(set.trials.front().length()) + "x" +
                                                     std::to_string(set.trials.front().channels()));
        }
    }
    set.validate();
    return set;
}

// ---------------------------------------------------------------------------
// Output files

/// Comment line carried by every text output.
[[nodiscard]] inline std::string stamp_line(std::uint64_t seed, std::uint64_t hash) {
    return "# seed=" + std::to_string(seed) + " config_hash=" + hex64(hash) + "\n";
}

/// Builds one CSV file in memory.
class CsvBuilder {
public:
    CsvBuilder(std::uint64_t seed, std::uint64_t hash, const std::vector<std::string>& columns) {
        out_ = stamp_line(seed, hash);
        for (std::size_t c = 0; c < columns.size(); ++c) out_ += (c ? "," : "") + columns[c];
        out_ += '\n';
    }

    CsvBuilder& field(const std::string& s) {
        sep();
        out_ += s;
        return *this;
    }
    CsvBuilder& field(double v) { return field(format_double(v)); }
    CsvBuilder& field(long long v) { return field(std::to_string(v)); }
    CsvBuilder& field(int v) { return field(std::to_string(v)); }
    CsvBuilder& field(std::size_t v) { return field(std::to_string(v)); }
    CsvBuilder& field(long v) { return field(std::to_string(v)); }
    void end_row() {
        out_ += '\n';
        first_ = true;
    }

    [[nodiscard]] const std::string& str() const { return out_; }

private:
    void sep() {
        if (!first_) out_ += ',';
        first_ = false;
    }
    std::string out_;
    bool first_ = true;
};

/// Trial files in the layout load_trials reads, t = sample / rate.
[[nodiscard]] inline std::map<std::string, std::string> trial_files(const TrialSet& set, std::uint64_t seed,
                                                                   std::uint64_t hash) {
    std::map<std::string, std::string> out;
    const int digits = std::max<int>(3, static_cast<int>(std::to_string(set.size()).size()));
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Trial& tr = set.trials[i];
        std::vector<std::string> cols{"t"};
        for (Eigen::Index c = 0; c < tr.channels(); ++c) cols.push_back("ch" + std::to_string(c + 1));
        CsvBuilder csv(seed, hash, cols);
        for (Eigen::Index r = 0; r < tr.length(); ++r) {
            csv.field(static_cast<double>(r) / tr.sample_rate_hz);
            for (Eigen::Index c = 0; c < tr.channels(); ++c) csv.field(tr.samples(r, c));
            csv.end_row();
        }
        std::string idx = std::to_string(i);
        idx.insert(0, static_cast<std::size_t>(std::max<int>(0, digits - static_cast<int>(idx.size()))), '0');
        out["trial_" + idx + "_" + tr.label + ".csv"] = csv.str();
    }
    return out;
}

/// A set of named files committed together: each goes to a temporary
/// sibling first and is renamed into place once all are written.
class OutputSet {
public:
    void add(const std::string& name, std::string bytes) { files_[name] = std::move(bytes); }
    void add_all(const std::map<std::string, std::string>& files) {
        for (const auto& [k, v] : files) files_[k] = v;
    }
    [[nodiscard]] const std::map<std::string, std::string>& files() const { return files_; }

    void commit(const fs::path& dir) const {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw Error(ErrorCode::ConfigError, "cannot create output directory " + dir.string());
        std::vector<fs::path> temps;
        try {
            for (const auto& [name, bytes] : files_) {
                const fs::path tmp = dir / (name + ".partial");
                temps.push_back(tmp);
                std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
                out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
                out.close();
                if (!out) throw Error(ErrorCode::ConfigError, "cannot write " + tmp.string());
            }
        } catch (...) {
            for (const auto& t : temps) fs::remove(t, ec);
            throw;
        }
        for (const auto& [name, bytes] : files_) fs::rename(dir / (name + ".partial"), dir / name);
    }

private:
    std::map<std::string, std::string> files_;
};

// ---------------------------------------------------------------------------
// Chain files
//
// Little-endian layout:
//   magic "LFGPCHN\0", u32 version, u64 seed, u64 config hash, u32 kernel,
//   u64 n, T_w, q, r, draws, lambda length,
//   f64 grid[T_w], f64 offset[q], f64 accept[r],
//   per draw: f64 log_post, sigma2, theta[r], loadings[r*q] (row-major),
//             lambda[lambda length], factors[n][T_w*r] (row-major).

inline constexpr std::uint32_t kChainVersion = 1;
inline constexpr char kChainMagic[8] = {'L', 'F', 'G', 'P', 'C', 'H', 'N', '\0'};

struct ChainHeader {
    std::uint32_t version = kChainVersion;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::uint64_t n = 0, windows = 0, q = 0, r = 0, draws = 0, lambda_len = 0;
};

namespace detail {

class ByteWriter {
public:
    template <class T>
    void put(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out_.append(buf, sizeof(T));
    }
    void put_doubles(const double* p, std::size_t count) {
        out_.append(reinterpret_cast<const char*>(p), count * sizeof(double));
    }
    void put_raw(const char* p, std::size_t count) { out_.append(p, count); }
    [[nodiscard]] std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& bytes) : b_(bytes) {}

    void need(std::size_t count, const char* what) const {
        if (b_.size() - pos_ < count) {
            throw Error(ErrorCode::ParseError, "chain file truncated at byte offset " + std::to_string(b_.size()) +
                                                   " while reading " + what + " (at byte " +
                                                   std::to_string(pos_) + ", needed " + std::to_string(count) +
                                                   " bytes)");
        }
    }
    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void get_doubles(double* p, std::size_t count, const char* what) {
        need(count * sizeof(double), what);
        std::memcpy(p, b_.data() + pos_, count * sizeof(double));
        pos_ += count * sizeof(double);
    }
    [[nodiscard]] std::size_t offset() const { return pos_; }
    [[nodiscard]] std::size_t remaining() const { return b_.size() - pos_; }

private:
    const std::string& b_;
    std::size_t pos_ = 0;
};

inline void put_matrix_rowmajor(ByteWriter& w, const Eigen::MatrixXd& m) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    w.put_doubles(rm.data(), static_cast<std::size_t>(rm.size()));
}

inline Eigen::MatrixXd get_matrix_rowmajor(ByteReader& r, Eigen::Index rows, Eigen::Index cols, const char* what) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    r.get_doubles(rm.data(), static_cast<std::size_t>(rm.size()), what);
    return rm;
}

}  // namespace detail

[[nodiscard]] inline std::string serialize_chain(const ChainDraws& c, std::uint64_t config_hash) {
    if (c.empty()) throw Error(ErrorCode::EmptyChain, "nothing to save");
    const ModelState& s0 = c.states.front();
    const auto n = static_cast<std::uint64_t>(s0.factors.size());
    const auto tw = static_cast<std::uint64_t>(s0.factors.empty() ? 0 : s0.factors.front().rows());
    const auto q = static_cast<std::uint64_t>(s0.loadings.cols());
    const auto r = static_cast<std::uint64_t>(s0.loadings.rows());
    const auto ll = static_cast<std::uint64_t>(s0.lambda.size());
    if (static_cast<std::uint64_t>(c.grid.size()) != tw) throw Error(ErrorCode::DimMismatch, "grid length");
    if (c.offset.size() != 0 && static_cast<std::uint64_t>(c.offset.size()) != q) {
        throw Error(ErrorCode::DimMismatch, "offset length");
    }
    if (c.log_posts.size() != c.states.size()) throw Error(ErrorCode::DimMismatch, "log_posts length");
    for (const auto& s : c.states) {
        bool ok = s.factors.size() == n && static_cast<std::uint64_t>(s.loadings.rows()) == r &&
                  static_cast<std::uint64_t>(s.loadings.cols()) == q && static_cast<std::uint64_t>(s.theta.size()) == r &&
                  static_cast<std::uint64_t>(s.lambda.size()) == ll;
        for (const auto& f : s.factors) {
            ok = ok && static_cast<std::uint64_t>(f.rows()) == tw && static_cast<std::uint64_t>(f.cols()) == r;
        }
        if (!ok) throw Error(ErrorCode::DimMismatch, "draws have inconsistent dimensions");
    }
    detail::ByteWriter w;
    w.put_raw(kChainMagic, sizeof kChainMagic);
    w.put(kChainVersion);
    w.put(c.seed);
    w.put(config_hash);
    w.put(static_cast<std::uint32_t>(c.kernel));
    for (std::uint64_t v : {n, tw, q, r, static_cast<std::uint64_t>(c.size()), ll}) w.put(v);
    w.put_doubles(c.grid.data(), tw);
    const Eigen::RowVectorXd offset = c.offset.size() ? c.offset : Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(q));
    w.put_doubles(offset.data(), q);
    Eigen::VectorXd accept = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(r));
    if (static_cast<std::uint64_t>(c.accept_rate_theta.size()) == r) accept = c.accept_rate_theta;
    w.put_doubles(accept.data(), r);
    for (std::size_t d = 0; d < c.size(); ++d) {
        const ModelState& s = c.states[d];
        w.put(c.log_posts[d]);
        w.put(s.sigma2);
        w.put_doubles(s.theta.data(), r);
        detail::put_matrix_rowmajor(w, s.loadings);
        w.put_doubles(s.lambda.data(), ll);
        for (const auto& f : s.factors) detail::put_matrix_rowmajor(w, f);
    }
    return w.take();
}

struct LoadedChain {
    ChainHeader header;
    ChainDraws draws;
};

/// Parses a chain file image. When expected_hash is given, a different
/// stored hash raises HashMismatch.
[[nodiscard]] inline LoadedChain deserialize_chain(const std::string& bytes,
                                                   std::optional<std::uint64_t> expected_hash = std::nullopt) {
    detail::ByteReader rd(bytes);
    rd.need(sizeof kChainMagic, "magic");
    if (std::memcmp(bytes.data(), kChainMagic, sizeof kChainMagic) != 0) {
        throw Error(ErrorCode::ParseError, "not a chain file (bad magic at byte offset 0)");
    }
    for (std::size_t i = 0; i < sizeof kChainMagic; ++i) (void)rd.get<char>("magic");
    LoadedChain out;
    ChainHeader& h = out.header;
    h.version = rd.get<std::uint32_t>("version");
    if (h.version != kChainVersion) {
        throw Error(ErrorCode::VersionMismatch, "chain file version " + std::to_string(h.version) + ", expected " +
                                                    std::to_string(kChainVersion));
    }
    h.seed = rd.get<std::uint64_t>("seed");
    h.config_hash = rd.get<std::uint64_t>("config hash");
    if (expected_hash && *expected_hash != h.config_hash) {
        throw Error(ErrorCode::HashMismatch, "chain was written under config " + hex64(h.config_hash) +
                                                 ", current config is " + hex64(*expected_hash));
    }
    const auto kernel = rd.get<std::uint32_t>("kernel");
    if (kernel > 1) {
        throw Error(ErrorCode::ParseError, "unknown kernel id at byte offset " + std::to_string(rd.offset() - 4));
    }
    h.n = rd.get<std::uint64_t>("n");
    h.windows = rd.get<std::uint64_t>("T_w");
    h.q = rd.get<std::uint64_t>("q");
    h.r = rd.get<std::uint64_t>("r");
    h.draws = rd.get<std::uint64_t>("draw count");
    h.lambda_len = rd.get<std::uint64_t>("lambda length");
    constexpr std::uint64_t kMaxDim = 1ULL << 24;
    for (std::uint64_t v : {h.n, h.windows, h.q, h.r, h.draws, h.lambda_len}) {
        if (v > kMaxDim) {
            throw Error(ErrorCode::ParseError, "implausible dimension " + std::to_string(v) + " before byte offset " +
                                                   std::to_string(rd.offset()));
        }
    }
    const std::uint64_t per_draw = 2 + h.r + h.r * h.q + h.lambda_len + h.n * h.windows * h.r;
    rd.need(8 * (h.windows + h.q + h.r), "grid, offset and acceptance rates");
    if (rd.remaining() - 8 * (h.windows + h.q + h.r) < 8 * per_draw * h.draws) {
        throw Error(ErrorCode::ParseError, "chain file truncated at byte offset " + std::to_string(bytes.size()) +
                                               ": header promises " + std::to_string(h.draws) + " draws of " +
                                               std::to_string(8 * per_draw) + " bytes");
    }
    ChainDraws& c = out.draws;
    c.seed = h.seed;
    c.kernel = static_cast<KernelFamily>(kernel);
    const auto tw = static_cast<Eigen::Index>(h.windows);
    const auto q = static_cast<Eigen::Index>(h.q);
    const auto r = static_cast<Eigen::Index>(h.r);
    c.grid.resize(tw);
    rd.get_doubles(c.grid.data(), h.windows, "grid");
    c.offset.resize(q);
    rd.get_doubles(c.offset.data(), h.q, "offset");
    c.accept_rate_theta.resize(r);
    rd.get_doubles(c.accept_rate_theta.data(), h.r, "acceptance rates");
    c.states.reserve(h.draws);
    for (std::uint64_t d = 0; d < h.draws; ++d) {
        ModelState s;
        c.log_posts.push_back(rd.get<double>("log posterior"));
        s.sigma2 = rd.get<double>("sigma2");
        s.theta.resize(r);
        rd.get_doubles(s.theta.data(), h.r, "theta");
        s.loadings = detail::get_matrix_rowmajor(rd, r, q, "loadings");
        s.lambda.resize(static_cast<Eigen::Index>(h.lambda_len));
        rd.get_doubles(s.lambda.data(), h.lambda_len, "lambda");
        for (std::uint64_t i = 0; i < h.n; ++i) s.factors.push_back(detail::get_matrix_rowmajor(rd, tw, r, "factors"));
        c.states.push_back(std::move(s));
    }
    if (rd.remaining() != 0) {
        throw Error(ErrorCode::ParseError, "trailing bytes after last draw at byte offset " + std::to_string(rd.offset()));
    }
    return out;
}

inline void save_chain(const fs::path& path, const ChainDraws& c, std::uint64_t config_hash) {
    OutputSet set;
    set.add(path.filename().string(), serialize_chain(c, config_hash));
    set.commit(path.has_parent_path() ? path.parent_path() : fs::path("."));
}

[[nodiscard]] inline LoadedChain load_chain(const fs::path& path, std::optional<std::uint64_t> expected_hash = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot read chain file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize_chain(ss.str(), expected_hash);
}

}  // namespace lfgp
