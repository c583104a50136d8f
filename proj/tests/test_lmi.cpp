/*
 * Copyright 2026 The lpvred Authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <random>

#include <gtest/gtest.h>

#include <unsupported/Eigen/KroneckerProduct>

#include <lpvred/lmi.hpp>

#include "test_util.hpp"

using namespace lpvred;
using lpvred::testing::randn;

namespace
{

/// Lyapunov block A^T X + X A <= t I written as N = I, M = A.
LmiBlock lyap_block(const Mat& a)
{
    return {Mat::Zero(a.rows(), a.rows()), Mat::Identity(a.rows(), a.rows()), a};
}

} // namespace

TEST(SymBasis, RoundTrip)
{
    const detail::SymBasis basis(4);
    EXPECT_EQ(basis.size(), 10);
    std::mt19937_64 rng(1);
    const Mat r = randn(rng, 4, 4);
    const Mat x = r + r.transpose();
    EXPECT_EQ(basis.to_mat(basis.to_vec(x)), x);
}

TEST(SymBasis, TraceIdentities)
{
    const detail::SymBasis basis(3);
    std::mt19937_64 rng(2);
    const Mat p = randn(rng, 3, 3), q = randn(rng, 3, 3);
    for (Index i = 0; i < basis.size(); ++i)
    {
        Vec ei = Vec::Zero(basis.size());
        ei(i) = 1.0;
        const Mat e_i = basis.to_mat(ei);
        EXPECT_NEAR(basis.inner(i, p), (e_i * p).trace(), 1e-14);
        for (Index j = 0; j < basis.size(); ++j)
        {
            Vec ej = Vec::Zero(basis.size());
            ej(j) = 1.0;
            const Mat e_j = basis.to_mat(ej);
            EXPECT_NEAR(basis.quad(i, j, p, q), (e_i * p * e_j * q).trace(), 1e-13);
        }
    }
}

TEST(LmiBarrier, DerivativesMatchFiniteDifferences)
{
    std::mt19937_64 rng(3);
    const Index n = 3;
    LmiProblem prob;
    prob.n = n;
    for (int k = 0; k < 2; ++k)
    {
        const Index b = 4;
        const Mat f = randn(rng, b, b);
        prob.blocks.push_back({f + f.transpose(), randn(rng, n, b), randn(rng, n, b)});
    }
    for (bool homogeneous : {false, true})
    {
        const detail::LmiBarrier barrier(prob, true, 0.0, homogeneous);
        const Mat x0 = 0.3 * Mat::Identity(n, n);
        Vec z(barrier.dim());
        z.head(barrier.basis().size()) = barrier.basis().to_vec(x0);
        z(barrier.dim() - 1) = 10.0 + 3.0 * prob.scale();
        Vec g;
        Mat h;
        barrier.derivatives(z, g, h);
        const double step = 1e-6;
        for (Index i = 0; i < barrier.dim(); ++i)
        {
            Vec zp = z, zm = z;
            zp(i) += step;
            zm(i) -= step;
            const double fd = (*barrier.value(zp) - *barrier.value(zm)) / (2.0 * step);
            EXPECT_NEAR(g(i), fd, 1e-6 * std::max(1.0, std::abs(fd))) << homogeneous;
            Vec gp, gm;
            Mat hp, hm;
            barrier.derivatives(zp, gp, hp);
            barrier.derivatives(zm, gm, hm);
            const Vec hcol = (gp - gm) / (2.0 * step);
            for (Index j = 0; j < barrier.dim(); ++j)
                EXPECT_NEAR(h(j, i), hcol(j), 1e-5 * std::max(1.0, std::abs(hcol(j))))
                    << homogeneous;
        }
    }
}

TEST(LmiPhase1, StableMatrixIsFeasible)
{
    std::mt19937_64 rng(4);
    const Mat a = lpvred::testing::random_stable_a(rng, 5, 0.3);
    LmiProblem prob{5, {lyap_block(a)}};
    const LmiPhase1Result r = lmi_phase1(prob);
    ASSERT_EQ(r.status, LmiStatus::feasible);
    Eigen::SelfAdjointEigenSolver<Mat> es(a.transpose() * r.X + r.X * a);
    EXPECT_LT(es.eigenvalues().maxCoeff(), 0.0);
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Mat>(r.X).eigenvalues().minCoeff(), 0.0);
}

TEST(LmiPhase1, UnstableMatrixIsInfeasible)
{
    const Mat a = (Mat(2, 2) << 0.1, 1.0, 0.0, -1.0).finished();
    LmiProblem prob{2, {lyap_block(a)}};
    EXPECT_EQ(lmi_phase1(prob).status, LmiStatus::infeasible);
}

TEST(LmiPhase1, SwitchedPairWithoutCommonLyapunovMatrix)
{
    // Both matrices are Hurwitz but share no quadratic Lyapunov function.
    const Mat a1 = (Mat(2, 2) << -0.1, 1.0, -10.0, -0.1).finished();
    const Mat a2 = (Mat(2, 2) << -0.1, 10.0, -1.0, -0.1).finished();
    LmiProblem both{2, {lyap_block(a1), lyap_block(a2)}};
    EXPECT_EQ(lmi_phase1(both).status, LmiStatus::infeasible);
    LmiProblem one{2, {lyap_block(a1)}};
    EXPECT_EQ(lmi_phase1(one).status, LmiStatus::feasible);
}

TEST(LmiPhase1, StaticProblem)
{
    LmiProblem neg{0, {{-Mat::Identity(2, 2), Mat(0, 2), Mat(0, 2)}}};
    EXPECT_EQ(lmi_phase1(neg).status, LmiStatus::feasible);
    LmiProblem pos{0, {{Mat::Identity(2, 2), Mat(0, 2), Mat(0, 2)}}};
    EXPECT_EQ(lmi_phase1(pos).status, LmiStatus::infeasible);
}

TEST(LmiMinTrace, ScalarLyapunov)
{
    // 2 a x + 1 <= -margin with a = -1: optimum x = (1 + margin) / 2.
    LmiProblem prob{1, {{Mat::Ones(1, 1), Mat::Identity(1, 1), -Mat::Identity(1, 1)}}};
    const Mat x = lmi_min_trace(prob, 1e-9, Mat::Constant(1, 1, 3.0));
    EXPECT_NEAR(x(0, 0), 0.5, 1e-7);
}

TEST(LmiMinTrace, ApproachesGramian)
{
    std::mt19937_64 rng(6);
    const Index n = 4;
    const Mat a = lpvred::testing::random_stable_a(rng, n, 0.5);
    const Mat b = randn(rng, n, 1);
    // A W + W A^T + B B^T <= -margin I.
    LmiProblem prob{n, {{b * b.transpose(), Mat::Identity(n, n), a.transpose()}}};
    const LmiPhase1Result start = lmi_phase1(prob);
    ASSERT_EQ(start.status, LmiStatus::feasible);
    Mat x0 = start.X;
    // Scale into the margin region for this inhomogeneous block.
    while (prob.max_eigenvalue(x0) >= -1e-9)
        x0 *= 2.0;
    const Mat w = lmi_min_trace(prob, 1e-9, x0);
    EXPECT_LT(prob.max_eigenvalue(w), -1e-9);
    // The Lyapunov solution is the trace minimizer as the margin vanishes.
    Mat gram = Mat::Zero(n, n);
    {
        // Kronecker solve as an independent reference.
        Mat k = Eigen::kroneckerProduct(Mat::Identity(n, n), a) + Eigen::kroneckerProduct(a, Mat::Identity(n, n));
        const Mat q = b * b.transpose();
        const Vec v = k.fullPivLu().solve(-Eigen::Map<const Vec>(q.data(), n * n));
        gram = Eigen::Map<const Mat>(v.data(), n, n);
    }
    EXPECT_NEAR(w.trace(), gram.trace(), 1e-5 * gram.trace());
}
