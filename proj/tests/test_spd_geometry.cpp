#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lfgp/spd_geometry.hpp"
#include "test_util.hpp"

using namespace lfgp;
using lfgp::testing::rel_frobenius;

TEST(MatrixLog, IdentityMapsToZero) {
    EXPECT_LT(matrix_log(Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MatrixLog, DiagonalIsElementwise) {
    Eigen::MatrixXd m = Eigen::Vector2d(std::exp(1.0), std::exp(2.0)).asDiagonal();
    Eigen::MatrixXd expected = Eigen::Vector2d(1.0, 2.0).asDiagonal();
    EXPECT_LT((matrix_log(m) - expected).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(MatrixLog, TwoByTwoHandEigendecomposition) {
    // eigenpairs (3, (1,1)/sqrt2) and (1, (1,-1)/sqrt2)
    Eigen::Matrix2d m;
    m << 2, 1, 1, 2;
    const double h = std::log(3.0) / 2.0;
    Eigen::Matrix2d expected;
    expected << h, h, h, h;
    EXPECT_LT((matrix_log(m) - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MatrixLog, RejectsIndefinite) {
    Eigen::Matrix2d m;
    m << 1, 2, 2, 1;
    try {
        (void)matrix_log(m);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotPositiveDefinite);
    }
    EXPECT_THROW((void)matrix_log(Eigen::MatrixXd::Zero(2, 2)), Error);
}

TEST(MatrixExp, ZeroAndDiagonal) {
    EXPECT_LT((matrix_exp(Eigen::MatrixXd::Zero(2, 2)) - Eigen::MatrixXd::Identity(2, 2)).norm(), 1e-15);
    Eigen::MatrixXd d = Eigen::Vector2d(1.0, 2.0).asDiagonal();
    Eigen::MatrixXd e = Eigen::Vector2d(std::exp(1.0), std::exp(2.0)).asDiagonal();
    EXPECT_LT((matrix_exp(d) - e).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MatrixExp, RejectsAsymmetric) {
    Eigen::Matrix2d m;
    m << 0, 1, 0.5, 0;
    try {
        (void)matrix_exp(m);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotSymmetric);
    }
}

TEST(MatrixExp, EigenvaluesAreExponentiated) {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        const Eigen::Index p = 2 + rep % 5;
        const Eigen::MatrixXd m = lfgp::testing::random_symmetric(rng, p);
        auto [ev, vecs] = lfgp::testing::jacobi_eigen(m);
        std::sort(ev.data(), ev.data() + ev.size());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(matrix_exp(m));
        Eigen::VectorXd got = es.eigenvalues();
        const double top = std::exp(ev.maxCoeff());
        for (Eigen::Index i = 0; i < p; ++i) EXPECT_NEAR(got(i), std::exp(ev(i)), 1e-13 * p * top);
        EXPECT_GT(got.minCoeff(), 0.0);
        EXPECT_LT((matrix_log(matrix_exp(m)) - m).norm(), 1e-8);
    }
}

TEST(VecUpper, RowMajorOrder) {
    Eigen::Matrix2d m;
    m << 1, 2, 2, 3;
    EXPECT_EQ(vec_upper(m), Eigen::Vector3d(1, 2, 3));
    Eigen::Matrix3d m3;
    m3 << 1, 2, 3, 2, 4, 5, 3, 5, 6;
    Eigen::VectorXd expected(6);
    expected << 1, 2, 3, 4, 5, 6;
    EXPECT_EQ(vec_upper(m3), expected);
    EXPECT_EQ(vec_upper(Eigen::MatrixXd::Identity(6, 6)).size(), 21);
}

TEST(UnvecUpper, InverseAndBadLength) {
    EXPECT_EQ(unvec_upper(Eigen::Vector3d(1, 2, 3)), (Eigen::Matrix2d() << 1, 2, 2, 3).finished());
    EXPECT_EQ(unvec_upper(Eigen::VectorXd::LinSpaced(21, 0, 20)).rows(), 6);
    try {
        (void)unvec_upper(Eigen::VectorXd::Zero(4));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::BadLength);
    }
}

TEST(VecUpper, RoundTripProperty) {
    std::mt19937_64 rng(11);
    for (Eigen::Index p = 1; p <= 10; ++p) {
        const Eigen::MatrixXd m = lfgp::testing::random_symmetric(rng, p);
        EXPECT_EQ(unvec_upper(vec_upper(m)), m);
        Eigen::VectorXd v = Eigen::VectorXd::Random(triangular_number(p));
        EXPECT_EQ(vec_upper(unvec_upper(v)), v);
    }
}

TEST(LogEuclidean, BasicValues) {
    std::mt19937_64 rng(3);
    const Eigen::MatrixXd x = lfgp::testing::random_spd(rng, 4);
    EXPECT_NEAR(log_euclidean_distance(x, x), 0.0, 1e-12);
    const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
    EXPECT_NEAR(log_euclidean_distance(i2, std::exp(1.0) * i2), std::sqrt(2.0), 1e-12);
    EXPECT_THROW((void)log_euclidean_distance(i2, Eigen::MatrixXd::Identity(3, 3)), Error);
}

TEST(LogEuclidean, MatchesJacobiOracle) {
    std::mt19937_64 rng(5);
    auto log_fn = [](double x) { return std::log(x); };
    for (int rep = 0; rep < 10; ++rep) {
        const Eigen::MatrixXd a = lfgp::testing::random_spd(rng, 4);
        const Eigen::MatrixXd b = lfgp::testing::random_spd(rng, 4);
        const double oracle =
            (lfgp::testing::jacobi_function(a, log_fn) - lfgp::testing::jacobi_function(b, log_fn)).norm();
        EXPECT_NEAR(log_euclidean_distance(a, b), oracle, 1e-10 * std::max(1.0, oracle));
    }
}

TEST(LogEuclidean, MetricAxioms) {
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 50; ++rep) {
        const Eigen::Index p = 2 + rep % 6;
        const Eigen::MatrixXd a = lfgp::testing::random_spd(rng, p);
        const Eigen::MatrixXd b = lfgp::testing::random_spd(rng, p);
        const Eigen::MatrixXd c = lfgp::testing::random_spd(rng, p);
        const double ab = log_euclidean_distance(a, b);
        EXPECT_NEAR(ab, log_euclidean_distance(b, a), 1e-12);
        EXPECT_GT(ab, 0.0);
        EXPECT_LE(ab, log_euclidean_distance(a, c) + log_euclidean_distance(c, b) + 1e-12);
        EXPECT_LT(log_euclidean_distance(a, a), 1e-10);
    }
}

TEST(SpdRoundTrip, ExpOfLogProperty) {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 100; ++rep) {
        const Eigen::Index p = 2 + rep % 7;
        const Eigen::MatrixXd m = lfgp::testing::random_spd(rng, p, 1e6);
        EXPECT_LE(rel_frobenius(matrix_exp(matrix_log(m)), m), 1e-8);
    }
}

TEST(MatrixLog, CommutesWithOrthogonalConjugation) {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 30; ++rep) {
        const Eigen::Index p = 2 + rep % 6;
        const Eigen::MatrixXd m = lfgp::testing::random_spd(rng, p);
        const Eigen::MatrixXd q = lfgp::testing::random_orthogonal(rng, p);
        Eigen::MatrixXd conj = q.transpose() * m * q;
        conj = 0.5 * (conj + conj.transpose());
        EXPECT_LT((matrix_log(conj) - q.transpose() * matrix_log(m) * q).norm(), 1e-8);
    }
}
