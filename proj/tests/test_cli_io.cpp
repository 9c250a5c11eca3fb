#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include "lfgp/cli_io.hpp"
#include "lfgp/pipeline.hpp"

using namespace lfgp;

namespace {

class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = fs::temp_directory_path() /
                ("lfgp_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" + std::to_string(::getpid()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    [[nodiscard]] const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) out[e.path().filename().string()] = read_file(e.path());
    return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no lfgp::Error thrown";
    return ErrorCode::InvalidArgument;
}

std::string message_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

Json minimal_config() {
    return Json::parse(R"({
        "io": {"seed": 11, "data_dir": "data"},
        "estimator": {"window_len": 30},
        "model": {"factors": 1, "n_draws": 50, "n_burn": 10, "thin": 1},
        "simulate": {"p": 3, "T": 200, "r_true": 1, "conditions": [{"label": "sim", "trials": 2}]}
    })");
}

RunConfig config_in(const fs::path& dir, const Json& j, const std::string& out = "out") {
    RunConfig cfg = parse_config(j, dir);
    cfg.io.out_dir = (dir / out).string();
    return cfg;
}

/// Simulates into dir/data with the config's simulate section.
void simulate_into(const fs::path& dir, const Json& j) {
    RunConfig cfg = config_in(dir, j, "data");
    execute("simulate", cfg);
}

ChainDraws small_chain(int draws = 3, bool with_lambda = false) {
    ChainDraws c;
    c.seed = 99;
    c.kernel = KernelFamily::Matern52;
    c.grid = Eigen::VectorXd::LinSpaced(4, 0.5, 3.5);
    c.offset = Eigen::RowVectorXd::LinSpaced(3, -1.0, 1.0);
    c.accept_rate_theta = Eigen::VectorXd::Constant(2, 0.25);
    Rng rng(5);
    for (int d = 0; d < draws; ++d) {
        ModelState s;
        s.factors = {draw_normal_matrix(rng, 4, 2), draw_normal_matrix(rng, 4, 2)};
        s.loadings = draw_normal_matrix(rng, 2, 3);
        s.sigma2 = 0.1 + d;
        s.theta = Eigen::Vector2d(1.0 / 3.0, std::exp(1.0 + d));
        if (with_lambda) s.lambda = Eigen::Vector3d(1e-300, 2.0, std::numeric_limits<double>::max());
        c.states.push_back(s);
        c.log_posts.push_back(-1234.5678 - d);
    }
    return c;
}

void expect_chain_equal(const ChainDraws& a, const ChainDraws& b) {
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.kernel, b.kernel);
    EXPECT_TRUE(a.grid == b.grid);
    EXPECT_TRUE(a.offset == b.offset);
    EXPECT_TRUE(a.accept_rate_theta == b.accept_rate_theta);
    EXPECT_EQ(a.log_posts, b.log_posts);
    for (std::size_t d = 0; d < a.size(); ++d) {
        const ModelState& x = a.states[d];
        const ModelState& y = b.states[d];
        EXPECT_EQ(x.sigma2, y.sigma2);
        EXPECT_TRUE(x.theta == y.theta);
        EXPECT_TRUE(x.loadings == y.loadings);
        EXPECT_TRUE(x.lambda == y.lambda);
        ASSERT_EQ(x.factors.size(), y.factors.size());
        for (std::size_t i = 0; i < x.factors.size(); ++i) EXPECT_TRUE(x.factors[i] == y.factors[i]);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// hashing and number formatting

TEST(Hash, Fnv1aPublishedVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Format, DoublesRoundTripExactly) {
    Rng rng(3);
    for (int i = 0; i < 2000; ++i) {
        const double v = draw_normal(rng) * std::pow(10.0, static_cast<int>(draw_uniform(rng) * 40) - 20);
        double back = 0.0;
        ASSERT_TRUE(detail::parse_number(format_double(v), back));
        EXPECT_EQ(back, v);
    }
}

// ---------------------------------------------------------------------------
// config

TEST(Config, DefaultsNeedSeed) {
    const RunConfig cfg = parse_config(Json::object());
    EXPECT_EQ(code_of([&] { (void)cfg.seed(); }), ErrorCode::ConfigError);
}

TEST(Config, UnknownKeysRejectedInEverySection) {
    for (const char* section : {"io", "estimator", "model", "experiment", "evaluation", "simulate", "baseline"}) {
        Json j;
        j[section] = {{"no_such_key", 1}};
        const std::string msg = message_of([&] { (void)parse_config(j); });
        EXPECT_NE(msg.find(std::string(section) + ".no_such_key"), std::string::npos) << section << ": " << msg;
        EXPECT_EQ(code_of([&] { (void)parse_config(j); }), ErrorCode::ConfigError);
    }
    EXPECT_EQ(code_of([] { (void)parse_config(Json{{"modle", Json::object()}}); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { (void)parse_config(Json::parse(R"({"simulate": {"conditions": [{"label": "a", "trail": 2}]}})")); }),
              ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { (void)parse_config(Json::parse(R"({"experiment": {"cells": [{"n": 1, "T": 2}]}})")); }),
              ErrorCode::ConfigError);
}

TEST(Config, TypeAndRangeErrors) {
    EXPECT_EQ(code_of([] { (void)parse_config(Json::parse(R"({"model": {"factors": "two"}})")); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { (void)parse_config(Json::parse(R"({"model": {"factors": 0}})")); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { (void)parse_config(Json::parse(R"({"model": {"kernel": "rbf2"}})")); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { (void)parse_config(Json::parse(R"({"evaluation": {"classifiers": ["svm"]}})")); }),
              ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { (void)parse_config(Json::parse(R"({"experiment": {"scenarios": ["sawtooth"]}})")); }),
              ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { (void)parse_config(Json::parse(R"({"estimator": {"window_len": 10, "window_ms": 10}})")); }),
              ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { (void)parse_config(Json::parse(R"({"io": []})")); }), ErrorCode::ConfigError);
}

TEST(Config, LoadConfigReportsSyntaxErrors) {
    TempDir tmp;
    write_file(tmp.path() / "bad.json", "{\"io\": {\"seed\": 1,}");
    EXPECT_EQ(code_of([&] { (void)load_config(tmp.path() / "bad.json"); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([&] { (void)load_config(tmp.path() / "missing.json"); }), ErrorCode::ConfigError);
}

TEST(Config, RelativePathsResolveAgainstConfigDirectory) {
    TempDir tmp;
    write_file(tmp.path() / "sub" / "c.json", R"({"io": {"seed": 3, "data_dir": "trials", "chain": "/abs/chain.bin"}})");
    const RunConfig cfg = load_config(tmp.path() / "sub" / "c.json");
    EXPECT_EQ(cfg.data_dir(), tmp.path() / "sub" / "trials");
    EXPECT_EQ(cfg.chain_path(), fs::path("/abs/chain.bin"));
    EXPECT_EQ(cfg.seed(), 3U);
}

TEST(Config, WindowMillisecondsUseSampleRate) {
    const RunConfig cfg = parse_config(Json::parse(R"({"estimator": {"window_ms": 100}})"));
    EXPECT_EQ(cfg.estimator.taper(500.0).window_len, 50);
    EXPECT_EQ(cfg.estimator.taper(1000.0).window_len, 100);
    const RunConfig samples = parse_config(Json::parse(R"({"estimator": {"window_len": 40}})"));
    EXPECT_EQ(samples.estimator.taper(500.0).window_len, 40);
}

TEST(Config, HashTracksResultRelevantFieldsOnly) {
    RunConfig a = parse_config(Json::parse(R"({"io": {"seed": 1}})"));
    RunConfig b = a;
    b.io.out_dir = "elsewhere";
    b.threads = 8;
    b.io.data_dir = "x";
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_EQ(fit_hash(a), fit_hash(b));
    b.model.mcmc.n_draws += 1;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_NE(fit_hash(a), fit_hash(b));
    RunConfig c = a;
    c.evaluation.k = 7;
    EXPECT_NE(config_hash(a), config_hash(c));
    EXPECT_EQ(fit_hash(a), fit_hash(c));
    RunConfig d = a;
    d.io.seed = 2;
    EXPECT_NE(fit_hash(a), fit_hash(d));
}

// ---------------------------------------------------------------------------
// trial files

TEST(LoadTrials, TwoFilesExactValues) {
    TempDir tmp;
    write_file(tmp.path() / "trial_0_odorB.csv", "t,ch1,ch2\n0,1.5,-2\n0.001,3,4e-3\n0.002,-0.25,7\n");
    write_file(tmp.path() / "trial_1_odor_C.csv", "t,ch1,ch2\n0,0,1\n0.001,2,3\n0.002,4,5\n");
    write_file(tmp.path() / "notes.txt", "ignored");
    const TrialSet set = load_trials(tmp.path());
    ASSERT_EQ(set.size(), 2U);
    Eigen::MatrixXd a(3, 2), b(3, 2);
    a << 1.5, -2, 3, 4e-3, -0.25, 7;
    b << 0, 1, 2, 3, 4, 5;
    EXPECT_TRUE(set.trials[0].samples == a);
    EXPECT_TRUE(set.trials[1].samples == b);
    EXPECT_EQ(set.trials[0].label, "odorB");
    EXPECT_EQ(set.trials[1].label, "odor_C");
    EXPECT_DOUBLE_EQ(set.trials[0].sample_rate_hz, 1000.0);
}

TEST(LoadTrials, MissingHeaderIsLineOne) {
    TempDir tmp;
    write_file(tmp.path() / "trial_0_a.csv", "0,1,2\n1,3,4\n");
    const std::string msg = message_of([&] { (void)load_trials(tmp.path()); });
    EXPECT_NE(msg.find("trial_0_a.csv:1:"), std::string::npos) << msg;
    EXPECT_EQ(code_of([&] { (void)load_trials(tmp.path()); }), ErrorCode::ParseError);
}

TEST(LoadTrials, BadCellReportsFileAndLine) {
    TempDir tmp;
    write_file(tmp.path() / "trial_0_a.csv", "# comment\nt,ch1\n0,1\n1,x\n");
    const std::string msg = message_of([&] { (void)load_trials(tmp.path()); });
    EXPECT_NE(msg.find("trial_0_a.csv:4:"), std::string::npos) << msg;
    write_file(tmp.path() / "trial_0_a.csv", "t,ch1\n0,1\n1,2,3\n");
    EXPECT_NE(message_of([&] { (void)load_trials(tmp.path()); }).find(":3:"), std::string::npos);
    write_file(tmp.path() / "trial_0_a.csv", "t,ch1\n1,1\n0,2\n");
    EXPECT_EQ(code_of([&] { (void)load_trials(tmp.path()); }), ErrorCode::ParseError);
}

TEST(LoadTrials, RaggedShapes) {
    TempDir tmp;
    write_file(tmp.path() / "trial_0_a.csv", "t,ch1,ch2\n0,1,2\n1,3,4\n");
    write_file(tmp.path() / "trial_1_a.csv", "t,ch1,ch2\n0,1,2\n1,3,4\n2,5,6\n");
    EXPECT_EQ(code_of([&] { (void)load_trials(tmp.path()); }), ErrorCode::RaggedTrials);
    write_file(tmp.path() / "trial_1_a.csv", "t,ch1\n0,1\n1,3\n");
    EXPECT_EQ(code_of([&] { (void)load_trials(tmp.path()); }), ErrorCode::RaggedTrials);
}

TEST(LoadTrials, NumericIndexOrderAndDuplicates) {
    TempDir tmp;
    for (int i : {10, 2, 1}) {
        write_file(tmp.path() / ("trial_" + std::to_string(i) + "_c" + std::to_string(i) + ".csv"),
                   "t,ch1\n0," + std::to_string(i) + "\n1,0\n");
    }
    const TrialSet set = load_trials(tmp.path());
    EXPECT_EQ(set.labels(), (std::vector<std::string>{"c1", "c2", "c10"}));
    write_file(tmp.path() / "trial_01_dup.csv", "t,ch1\n0,1\n1,0\n");
    EXPECT_EQ(code_of([&] { (void)load_trials(tmp.path()); }), ErrorCode::ParseError);
}

TEST(LoadTrials, EmptyOrMissingDirectory) {
    TempDir tmp;
    EXPECT_EQ(code_of([&] { (void)load_trials(tmp.path()); }), ErrorCode::RaggedTrials);
    EXPECT_EQ(code_of([&] { (void)load_trials(tmp.path() / "nope"); }), ErrorCode::ConfigError);
}

TEST(LoadTrials, OdorSizedDirectory) {
    TempDir tmp;
    Rng rng(8);
    TrialSet set;
    for (int i = 0; i < 78; ++i) {
        Trial tr;
        tr.samples = draw_normal_matrix(rng, 1000, 6);
        tr.label = i < 41 ? "B" : "C";
        set.trials.push_back(tr);
    }
    OutputSet out;
    out.add_all(trial_files(set, 1, 2));
    out.commit(tmp.path());
    const TrialSet back = load_trials(tmp.path());
    ASSERT_EQ(back.size(), 78U);
    const auto labels = back.labels();
    EXPECT_EQ(std::count(labels.begin(), labels.end(), "B"), 41);
    EXPECT_EQ(std::count(labels.begin(), labels.end(), "C"), 37);
    for (std::size_t i = 0; i < 78; ++i) {
        EXPECT_EQ(back.trials[i].samples.rows(), 1000);
        EXPECT_EQ(back.trials[i].samples.cols(), 6);
        EXPECT_TRUE(back.trials[i].samples == set.trials[i].samples) << i;
        EXPECT_DOUBLE_EQ(back.trials[i].sample_rate_hz, 1000.0);
    }
}

TEST(LoadTrials, NonDefaultSampleRateRoundTrips) {
    TempDir tmp;
    TrialSet set;
    Trial tr;
    tr.samples = Eigen::MatrixXd::Random(20, 2);
    tr.sample_rate_hz = 250.0;
    tr.label = "x";
    set.trials = {tr, tr};
    OutputSet out;
    out.add_all(trial_files(set, 1, 2));
    out.commit(tmp.path());
    EXPECT_DOUBLE_EQ(load_trials(tmp.path()).trials[1].sample_rate_hz, 250.0);
}

// ---------------------------------------------------------------------------
// chain files

TEST(ChainFile, RoundTripIsBitExact) {
    TempDir tmp;
    for (bool lambda : {false, true}) {
        const ChainDraws c = small_chain(4, lambda);
        save_chain(tmp.path() / "c.bin", c, 0xabcdefULL);
        const LoadedChain back = load_chain(tmp.path() / "c.bin", 0xabcdefULL);
        expect_chain_equal(c, back.draws);
        EXPECT_EQ(back.header.config_hash, 0xabcdefULL);
        EXPECT_EQ(back.header.seed, 99U);
        EXPECT_EQ(back.header.n, 2U);
        EXPECT_EQ(back.header.windows, 4U);
        EXPECT_EQ(back.header.q, 3U);
        EXPECT_EQ(back.header.r, 2U);
        EXPECT_EQ(serialize_chain(back.draws, 0xabcdefULL), read_file(tmp.path() / "c.bin"));
    }
}

TEST(ChainFile, SamplerOutputRoundTrips) {
    Rng rng(4);
    const ModelSample sample = simulate_from_model(Eigen::MatrixXd::Ones(1, 3), 0.1, Eigen::VectorXd::Constant(1, 3.0),
                                                   KernelFamily::SquaredExponential,
                                                   Eigen::VectorXd::LinSpaced(12, 0, 11), 2, rng);
    ModelConfig m;
    m.factors = 1;
    m.mcmc.n_draws = 20;
    m.mcmc.n_burn = 5;
    m.mcmc.thin = 3;
    const ChainDraws c = gibbs_run(sample.y, m);
    expect_chain_equal(c, deserialize_chain(serialize_chain(c, 7)).draws);
}

TEST(ChainFile, EveryTruncationIsAParseErrorWithOffset) {
    const std::string bytes = serialize_chain(small_chain(2, true), 1);
    for (std::size_t len = 0; len < bytes.size(); ++len) {
        const std::string cut = bytes.substr(0, len);
        const std::string msg = message_of([&] { (void)deserialize_chain(cut); });
        EXPECT_EQ(code_of([&] { (void)deserialize_chain(cut); }), ErrorCode::ParseError) << len;
        EXPECT_NE(msg.find("byte offset " + std::to_string(len)), std::string::npos) << len << ": " << msg;
    }
    EXPECT_EQ(code_of([&] { (void)deserialize_chain(bytes + "x"); }), ErrorCode::ParseError);
}

TEST(ChainFile, HashVersionAndMagicChecks) {
    std::string bytes = serialize_chain(small_chain(), 42);
    EXPECT_EQ(code_of([&] { (void)deserialize_chain(bytes, 43); }), ErrorCode::HashMismatch);
    EXPECT_NO_THROW((void)deserialize_chain(bytes, 42));
    EXPECT_NO_THROW((void)deserialize_chain(bytes));
    std::string newer = bytes;
    newer[8] = 2;
    EXPECT_EQ(code_of([&] { (void)deserialize_chain(newer, 42); }), ErrorCode::VersionMismatch);
    std::string junk = bytes;
    junk[0] = 'X';
    EXPECT_EQ(code_of([&] { (void)deserialize_chain(junk); }), ErrorCode::ParseError);
}

TEST(ChainFile, RefusesInconsistentDraws) {
    ChainDraws c = small_chain();
    c.states[1].loadings = Eigen::MatrixXd::Zero(3, 3);
    EXPECT_EQ(code_of([&] { (void)serialize_chain(c, 1); }), ErrorCode::DimMismatch);
    EXPECT_EQ(code_of([&] { (void)serialize_chain(ChainDraws{}, 1); }), ErrorCode::EmptyChain);
}

// ---------------------------------------------------------------------------
// output files

TEST(Output, CommitWritesAllFilesAndNoTemporaries) {
    TempDir tmp;
    OutputSet out;
    out.add("a.csv", "1");
    out.add("b.bin", std::string("\0\1", 2));
    out.commit(tmp.path() / "o");
    const auto files = dir_contents(tmp.path() / "o");
    EXPECT_EQ(files.size(), 2U);
    EXPECT_EQ(files.at("b.bin").size(), 2U);
}

TEST(Output, CsvHeaderCarriesSeedAndHash) {
    CsvBuilder csv(17, 0x1fULL, {"a", "b"});
    csv.field(0.1).field(std::string("x")).end_row();
    EXPECT_EQ(csv.str(), "# seed=17 config_hash=0x000000000000001f\na,b\n0.1,x\n");
}

// ---------------------------------------------------------------------------
// pipeline

TEST(Pipeline, MinimalRunProducesAllOutputsQuickly) {
    TempDir tmp;
    const Json j = minimal_config();
    simulate_into(tmp.path(), j);
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig cfg = config_in(tmp.path(), j);
    execute("fit", cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 60.0);
    const auto files = dir_contents(tmp.path() / "out");
    for (const char* name : {"chain.bin", "posterior_median_cov.csv", "covariance_grid.csv", "factors.csv",
                             "trajectories.csv", "separation.csv", "separation_curve.csv", "summary.csv"}) {
        EXPECT_TRUE(files.count(name)) << name;
    }
    const std::string stamp = stamp_line(11, config_hash(cfg));
    for (const auto& [name, bytes] : files) {
        if (name.ends_with(".csv")) {
            EXPECT_EQ(bytes.rfind(stamp, 0), 0U) << name;
        }
    }
    const LoadedChain chain = load_chain(tmp.path() / "out" / "chain.bin", fit_hash(cfg));
    EXPECT_EQ(chain.draws.size(), 40U);
    EXPECT_EQ(chain.header.seed, derive_seed(11, stream::kFit));
    EXPECT_EQ(chain.header.windows, 171U);
    EXPECT_EQ(chain.header.q, 6U);
}

TEST(Pipeline, PosteriorMedianCsvMatchesLibrary) {
    TempDir tmp;
    const Json j = minimal_config();
    simulate_into(tmp.path(), j);
    const RunConfig cfg = config_in(tmp.path(), j);
    execute("fit", cfg);
    const ChainDraws chain = load_chain(tmp.path() / "out" / "chain.bin").draws;
    const auto med = reconstruct_covariance(chain);
    std::istringstream in(read_file(tmp.path() / "out" / "posterior_median_cov.csv"));
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    int rows = 0;
    while (std::getline(in, line)) {
        const auto f = detail::split_commas(line);
        const int trial = std::stoi(std::string(f[1]));
        const int w = std::stoi(std::string(f[3]));
        const int a = std::stoi(std::string(f[5])) - 1;
        const int b = std::stoi(std::string(f[6])) - 1;
        double v = 0.0;
        ASSERT_TRUE(detail::parse_number(f[7], v));
        EXPECT_EQ(v, med[static_cast<std::size_t>(trial)][static_cast<std::size_t>(w)](a, b));
        ++rows;
    }
    EXPECT_EQ(rows, 2 * 171 * 6);
}

TEST(Pipeline, SameSeedTwiceIsByteIdentical) {
    TempDir tmp;
    const Json j = minimal_config();
    simulate_into(tmp.path(), j);
    RunConfig a = config_in(tmp.path(), j, "a");
    RunConfig b = config_in(tmp.path(), j, "b");
    b.threads = 3;
    execute("fit", a);
    execute("fit", b);
    EXPECT_EQ(dir_contents(tmp.path() / "a"), dir_contents(tmp.path() / "b"));
    RunConfig c = config_in(tmp.path(), j, "c");
    c.io.seed = 12;
    execute("fit", c);
    EXPECT_NE(read_file(tmp.path() / "a" / "chain.bin"), read_file(tmp.path() / "c" / "chain.bin"));
}

TEST(Pipeline, EverySubcommandIsIdempotent) {
    TempDir tmp;
    Json j = minimal_config();
    j["simulate"]["conditions"] = Json::parse(R"([{"label": "B", "trials": 4}, {"label": "C", "trials": 4}])");
    j["evaluation"] = {{"folds", 3}, {"k", 3}};
    j["baseline"] = {{"hmm_states", 3}, {"hmm_restarts", 2}, {"aic_states", {1, 2}}};
    j["experiment"] = Json::parse(R"({"kind": "all", "n_reps": 1, "T": 200, "p": 3, "r_true": 2, "window_len": 20,
        "hmm_max_states": 2, "comparison_model": {"factors": 2, "n_draws": 30, "n_burn": 10, "thin": 2},
        "cells": [{"n": 1, "t": 10}], "contraction_model": {"n_draws": 30, "n_burn": 10, "thin": 2}})");
    simulate_into(tmp.path(), j);
    for (const char* dir : {"a", "b"}) {
        const RunConfig cfg = config_in(tmp.path(), j, dir);
        for (const char* cmd : {"estimate", "fit", "addfactor", "separate", "baseline", "bench"}) execute(cmd, cfg);
    }
    const auto a = dir_contents(tmp.path() / "a");
    EXPECT_EQ(a, dir_contents(tmp.path() / "b"));
    for (const char* name : {"sw_logcov.csv", "chain_horseshoe.bin", "loadings.csv", "hmm_states.csv", "hmm_aic.csv",
                             "pca_variance.csv", "comparison.csv", "comparison_summary.csv", "contraction.csv"}) {
        EXPECT_TRUE(a.count(name)) << name;
    }
    RunConfig again = config_in(tmp.path(), j, "data2");
    execute("simulate", again);
    EXPECT_EQ(dir_contents(tmp.path() / "data"), dir_contents(tmp.path() / "data2"));
}

TEST(Pipeline, WindowLongerThanTrialLeavesNoOutputs) {
    TempDir tmp;
    Json j = minimal_config();
    simulate_into(tmp.path(), j);
    j["estimator"]["window_len"] = 201;
    const RunConfig cfg = config_in(tmp.path(), j);
    EXPECT_EQ(code_of([&] { execute("fit", cfg); }), ErrorCode::WindowTooLong);
    EXPECT_FALSE(fs::exists(tmp.path() / "out"));
    EXPECT_EQ(category_of(ErrorCode::WindowTooLong), ErrorCategory::Config);
}

TEST(Pipeline, EditedModelConfigIsHashMismatch) {
    TempDir tmp;
    Json j = minimal_config();
    j["simulate"]["conditions"] = Json::parse(R"([{"label": "B", "trials": 2}, {"label": "C", "trials": 2}])");
    j["evaluation"] = {{"folds", 2}};
    simulate_into(tmp.path(), j);
    execute("fit", config_in(tmp.path(), j));
    j["model"]["noise_rate"] = 0.02;
    const RunConfig edited = config_in(tmp.path(), j);
    EXPECT_EQ(code_of([&] { (void)run_separate(edited); }), ErrorCode::HashMismatch);
    EXPECT_EQ(code_of([&] { (void)run_addfactor(edited); }), ErrorCode::HashMismatch);
    Json k = minimal_config();
    k["simulate"] = j["simulate"];
    k["evaluation"] = {{"folds", 2}, {"k", 1}};
    EXPECT_NO_THROW((void)run_separate(config_in(tmp.path(), k)));
}

TEST(Pipeline, SimulatedConditionsShareLoadingsAndDifferOnlyWithEffect) {
    SimulateConfig sim;
    sim.conditions = {{"B", 2}, {"C", 3}};
    sim.effect = 0.0;
    const SimulatedData same = simulate_conditions(sim, 4);
    ASSERT_EQ(same.truth.size(), 2U);
    EXPECT_TRUE(same.truth[0].u == same.truth[1].u);
    EXPECT_EQ(same.trials.size(), 5U);
    sim.effect = 0.5;
    const SimulatedData diff = simulate_conditions(sim, 4);
    EXPECT_TRUE(diff.truth[0].a == diff.truth[1].a);
    EXPECT_GT((diff.truth[0].u - diff.truth[1].u).norm(), 0.1);
    for (const auto& g : diff.truth) {
        EXPECT_LE(g.log_cov().cwiseAbs().maxCoeff(), sim.truth.max_log_entry + 1e-12);
    }
}

// ---------------------------------------------------------------------------
// command line exit codes (needs LFGP_CLI)

namespace {

int run_cli(const std::string& args) {
    const char* cli = std::getenv("LFGP_CLI");
    const int status = std::system((std::string(cli) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
    if (!std::getenv("LFGP_CLI")) GTEST_SKIP() << "LFGP_CLI not set";
    TempDir tmp;
    const std::string d = tmp.path().string();
    Json j = minimal_config();
    write_file(tmp.path() / "ok.json", j.dump());
    EXPECT_EQ(run_cli("simulate --config " + d + "/ok.json --out " + d + "/data"), 0);
    EXPECT_EQ(run_cli("fit --config " + d + "/ok.json --out " + d + "/run --threads 2"), 0);
    EXPECT_TRUE(fs::exists(tmp.path() / "run" / "chain.bin"));

    Json typo = j;
    typo["model"]["factros"] = 2;
    write_file(tmp.path() / "typo.json", typo.dump());
    EXPECT_EQ(run_cli("fit --config " + d + "/typo.json --out " + d + "/x"), 2);

    Json noseed = j;
    noseed["io"].erase("seed");
    write_file(tmp.path() / "noseed.json", noseed.dump());
    EXPECT_EQ(run_cli("fit --config " + d + "/noseed.json --out " + d + "/x"), 2);
    EXPECT_EQ(run_cli("estimate --config " + d + "/noseed.json --seed 5 --out " + d + "/x"), 0);

    Json longwin = j;
    longwin["estimator"]["window_len"] = 500;
    write_file(tmp.path() / "long.json", longwin.dump());
    EXPECT_EQ(run_cli("fit --config " + d + "/long.json --out " + d + "/long"), 2);
    EXPECT_FALSE(fs::exists(tmp.path() / "long"));

    write_file(tmp.path() / "data" / "trial_999_bad.csv", "t,ch1,ch2,ch3\n0,1,2\n");
    EXPECT_EQ(run_cli("fit --config " + d + "/ok.json --out " + d + "/bad"), 3);
    fs::remove(tmp.path() / "data" / "trial_999_bad.csv");

    Json edited = j;
    edited["model"]["n_draws"] = 60;
    write_file(tmp.path() / "edited.json", edited.dump());
    EXPECT_EQ(run_cli("separate --config " + d + "/edited.json --out " + d + "/run"), 3);

    EXPECT_EQ(run_cli("fly --config " + d + "/ok.json"), 2);
    EXPECT_EQ(run_cli("fit --config " + d + "/absent.json"), 2);
    EXPECT_EQ(run_cli("fit --config " + d + "/ok.json --threads 0"), 2);
}
