#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lfgp/sw_estimator.hpp"
#include "test_util.hpp"

using namespace lfgp;

namespace {

Trial gaussian_trial(std::mt19937_64& rng, const Eigen::MatrixXd& cov, Eigen::Index samples) {
    std::normal_distribution<double> nd;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    const Eigen::MatrixXd l = llt.matrixL();
    Trial tr;
    tr.samples.resize(samples, cov.rows());
    for (Eigen::Index t = 0; t < samples; ++t) {
        Eigen::VectorXd z(cov.rows());
        for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = nd(rng);
        tr.samples.row(t) = (l * z).transpose();
    }
    return tr;
}

Eigen::MatrixXd time_average(const CovarianceProcess& proc) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(proc.front().rows(), proc.front().cols());
    for (const auto& k : proc) acc += k;
    return acc / static_cast<double>(proc.size());
}

}  // namespace

TEST(TaperWeights, DegenerateSingleSample) {
    const Eigen::VectorXd h = taper_weights({1, 0.5});
    ASSERT_EQ(h.size(), 1);
    EXPECT_DOUBLE_EQ(h(0), 1.0);
}

TEST(TaperWeights, WideTaperIsRectangular) {
    const Eigen::VectorXd h = taper_weights({5, 1e6});
    for (Eigen::Index t = 0; t < 5; ++t) EXPECT_NEAR(h(t), 0.2, 1e-6);
}

TEST(TaperWeights, MatchesDirectFormula) {
    const int len = 50;
    const double tau = 0.5;
    Eigen::VectorXd raw(len);
    for (int t = 0; t < len; ++t) {
        const double z = (t - len / 2.0) / (tau * len / 2.0);
        raw(t) = std::exp(-0.5 * z * z);
    }
    const Eigen::VectorXd oracle = raw / raw.sum();
    const Eigen::VectorXd h = taper_weights({len, tau});
    EXPECT_LT((h - oracle).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(h.sum(), 1.0, 1e-14);
    // symmetric about the peak at L/2
    for (int k = 1; k < len / 2; ++k) EXPECT_NEAR(h(len / 2 - k), h(len / 2 + k), 1e-15);
    EXPECT_EQ(h.maxCoeff(), h(len / 2));
}

TEST(TaperWeights, AlwaysNormalized) {
    for (int len : {2, 3, 7, 50, 101})
        for (double tau : {0.1, 0.5, 2.0}) EXPECT_NEAR(taper_weights({len, tau}).sum(), 1.0, 1e-13);
}

TEST(SlidingWindow, ConstantSignal) {
    Trial tr;
    tr.samples = Eigen::MatrixXd(20, 2);
    tr.samples.col(0).setConstant(2.0);
    tr.samples.col(1).setConstant(-1.0);
    SlidingWindowOptions opts;
    opts.center = false;
    const CovarianceProcess proc = sliding_window_cov(tr, {5, 0.5}, opts);
    ASSERT_EQ(proc.size(), 16u);
    Eigen::Matrix2d cc;
    cc << 4, -2, -2, 1;
    const double ridge = 1e-6 * cc.trace() / 2.0;
    for (const auto& k : proc) {
        EXPECT_LT((k - cc - ridge * Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(SlidingWindow, RectangularFullWindowIsSecondMoment) {
    std::mt19937_64 rng(1);
    Trial tr = gaussian_trial(rng, Eigen::Matrix2d::Identity(), 40);
    SlidingWindowOptions opts;
    opts.center = false;
    const CovarianceProcess proc = sliding_window_cov(tr, {40, 1e6}, opts);
    ASSERT_EQ(proc.size(), 1u);
    Eigen::MatrixXd expected = tr.samples.transpose() * tr.samples / 40.0;
    expected.diagonal().array() += 1e-6 * expected.trace() / 2.0;
    EXPECT_LT((proc.front() - expected).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(SlidingWindow, WindowTooLong) {
    Trial tr;
    tr.samples = Eigen::MatrixXd::Ones(10, 2);
    try {
        (void)sliding_window_cov(tr, {11, 0.5});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::WindowTooLong);
    }
}

TEST(SlidingWindow, WhiteNoiseTimeAverage) {
    std::mt19937_64 rng(2024);
    Eigen::Matrix2d cov;
    cov << 1.0, 0.4, 0.4, 2.0;
    const Trial tr = gaussian_trial(rng, cov, 2000);
    const CovarianceProcess proc = sliding_window_cov(tr, {100, 0.5});
    EXPECT_EQ(proc.size(), 1901u);
    EXPECT_LT(lfgp::testing::rel_frobenius(time_average(proc), cov), 0.10);
}

TEST(SlidingWindow, StationaryConsistency) {
    std::mt19937_64 rng(99);
    const Eigen::MatrixXd cov = lfgp::testing::random_spd(rng, 3, 10.0);
    const Trial tr = gaussian_trial(rng, cov, 5000);
    const CovarianceProcess proc = sliding_window_cov(tr, {100, 0.5});
    EXPECT_LE(lfgp::testing::rel_frobenius(time_average(proc), cov), 0.05);
    for (const auto& k : proc) {
        EXPECT_TRUE(is_symmetric(k));
        EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k).eigenvalues().minCoeff(), 0.0);
    }
}

TEST(LogCovSeries, IdentityWindowsGiveZeros) {
    // alternating (1,1), (1,-1): every 2-sample rectangular window averages to I
    Trial tr;
    tr.samples.resize(12, 2);
    for (Eigen::Index t = 0; t < 12; ++t) tr.samples.row(t) << 1.0, (t % 2 == 0 ? 1.0 : -1.0);
    TrialSet set{{tr, tr}};
    SlidingWindowOptions opts;
    opts.center = false;
    opts.jitter = 0.0;
    const LogCovSeries y = to_log_cov_series(set, {2, 1e6}, opts);
    EXPECT_EQ(y.n(), 2);
    EXPECT_EQ(y.windows(), 11);
    EXPECT_EQ(y.q(), 3);
    for (const auto& v : y.values) EXPECT_LT(v.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(LogCovSeries, RoundTripAndCenters) {
    std::mt19937_64 rng(4);
    TrialSet set;
    for (int i = 0; i < 3; ++i) set.trials.push_back(gaussian_trial(rng, lfgp::testing::random_spd(rng, 3, 5.0), 120));
    const TaperSpec spec{30, 0.5};
    const LogCovSeries y = to_log_cov_series(set, spec);
    ASSERT_EQ(y.windows(), 120 - 30 + 1);
    EXPECT_DOUBLE_EQ(y.time_index(0), 14.5);
    EXPECT_DOUBLE_EQ(y.time_index(y.windows() - 1), 90 + 14.5);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const CovarianceProcess proc = sliding_window_cov(set.trials[i], spec);
        for (Eigen::Index t = 0; t < y.windows(); t += 7) {
            const Eigen::MatrixXd back = matrix_exp(unvec_upper(y.values[i].row(t).transpose()));
            EXPECT_LE(lfgp::testing::rel_frobenius(back, proc[static_cast<std::size_t>(t)]), 1e-8);
        }
    }
}

TEST(LogCovSeries, SingularWindowReportsCoordinates) {
    Trial tr;
    tr.samples = Eigen::MatrixXd::Zero(10, 2);
    TrialSet set{{tr}};
    SlidingWindowOptions opts;
    opts.jitter = 0.0;
    try {
        (void)to_log_cov_series(set, {4, 0.5}, opts);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotPositiveDefinite);
        EXPECT_NE(std::string(e.what()).find("trial 0, window 0"), std::string::npos);
    }
}

TEST(TrialSet, RaggedRejected) {
    Trial a, b;
    a.samples = Eigen::MatrixXd::Ones(10, 2);
    b.samples = Eigen::MatrixXd::Ones(11, 2);
    TrialSet set{{a, b}};
    try {
        set.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::RaggedTrials);
    }
}

TEST(LogCovSeries, Subsample) {
    LogCovSeries y;
    y.time_index = Eigen::VectorXd::LinSpaced(10, 0, 9);
    y.values.push_back(Eigen::MatrixXd::Random(10, 3));
    const LogCovSeries s = y.subsample(3);
    ASSERT_EQ(s.windows(), 4);
    EXPECT_EQ(s.time_index, Eigen::Vector4d(0, 3, 6, 9));
    EXPECT_EQ(s.values[0].row(2), y.values[0].row(6));
}
