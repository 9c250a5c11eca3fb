#include <gtest/gtest.h>

#include <random>

#include "lfgp/kron.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lfgp;

namespace {

Eigen::MatrixXd random_psd(std::mt19937_64& rng, Eigen::Index n, Eigen::Index rank) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd g(n, rank);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = nd(rng);
    return g * g.transpose();
}

}  // namespace

TEST(KronSolve, ZeroLeftFactorIsIdentity) {
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd s = lfgp::testing::random_spd(rng, 4);
    const Eigen::VectorXd v = Eigen::VectorXd::Random(12);
    EXPECT_LT((kron_solve(Eigen::MatrixXd::Zero(3, 3), s, v) - v).norm(), 1e-14);
}

TEST(KronSolve, IdentitiesHalve) {
    const Eigen::VectorXd v = Eigen::VectorXd::Random(12);
    EXPECT_LT((kron_solve(Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Identity(4, 4), v) - v / 2.0).norm(),
              1e-14);
}

TEST(KronSolve, MatchesDenseInverseSmall) {
    std::mt19937_64 rng(2);
    const Eigen::MatrixXd a = random_psd(rng, 3, 3);
    const Eigen::MatrixXd s = random_psd(rng, 4, 4);
    const Eigen::VectorXd v = Eigen::VectorXd::Random(12);
    const Eigen::MatrixXd dense = lfgp::testing::kron(a, s) + Eigen::MatrixXd::Identity(12, 12);
    const Eigen::VectorXd oracle = dense.fullPivLu().solve(v);
    EXPECT_LT((kron_solve(a, s, v) - oracle).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(KronSolve, MatchesDenseAcrossShapesAndRanks) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> qd(1, 6), md(1, 30);
    for (int rep = 0; rep < 60; ++rep) {
        const int q = qd(rng);
        int m = md(rng);
        while (q * m > 200) --m;
        const Eigen::MatrixXd a = random_psd(rng, q, 1 + rep % q);  // includes rank-deficient A
        const Eigen::MatrixXd s = random_psd(rng, m, m);
        const Eigen::VectorXd v = Eigen::VectorXd::Random(q * m);
        const Eigen::MatrixXd dense = lfgp::testing::kron(a, s) + Eigen::MatrixXd::Identity(q * m, q * m);
        const Eigen::VectorXd oracle = dense.fullPivLu().solve(v);
        EXPECT_LE((kron_solve(a, s, v) - oracle).cwiseAbs().maxCoeff(), 1e-8) << "q=" << q << " m=" << m;
    }
}

TEST(KronSolve, Errors) {
    Eigen::Matrix2d asym;
    asym << 1, 2, 0, 1;
    try {
        (void)kron_solve(asym, Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(4));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotSymmetric);
    }
    EXPECT_THROW((void)kron_solve(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2),
                                  Eigen::VectorXd::Zero(5)),
                 Error);
}
