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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include <lpvred/analysis.hpp>
#include <lpvred/bench.hpp>

#include "test_util.hpp"

using namespace lpvred;
using lpvred::testing::dense_sweep_hinf;
using lpvred::testing::random_stable;
using lpvred::testing::siso_poly_oracle;

namespace
{

Vec vec2(double a, double b) { return (Vec(2) << a, b).finished(); }

LtiStateSpace first_order_lag()
{
    return LtiStateSpace(Mat::Constant(1, 1, -1.0), Mat::Ones(1, 1), Mat::Ones(1, 1),
                         Mat::Zero(1, 1));
}

LtiStateSpace static_gain(double g) { return LtiStateSpace::gain(Mat::Constant(1, 1, g)); }

struct QuietWarnings
{
    QuietWarnings() { set_warning_handler([](const std::string&) {}); }
    ~QuietWarnings() { set_warning_handler(nullptr); }
};

} // namespace

TEST(SpectralAbscissa, Examples)
{
    EXPECT_DOUBLE_EQ(spectral_abscissa(vec2(-1.0, -2.0).asDiagonal().toDenseMatrix()), -1.0);
    EXPECT_NEAR(spectral_abscissa((Mat(2, 2) << 0.0, 1.0, -1.0, 0.0).finished()), 0.0, 1e-15);
    const LpvModel g = build_msd({});
    for (double r : {-1.0, -0.5, 0.0, 0.5, 1.0})
        EXPECT_LT(spectral_abscissa(g.A()(Vec::Constant(1, r))), 0.0);
    EXPECT_THROW(spectral_abscissa(Mat::Zero(2, 3)), Error);
}

TEST(Lyapunov, Scalar)
{
    const Mat x = solve_lyapunov(Mat::Constant(1, 1, -1.0), Mat::Constant(1, 1, 2.0));
    EXPECT_NEAR(x(0, 0), 1.0, 1e-14);
}

TEST(Lyapunov, Decoupled)
{
    const Mat a = vec2(-1.0, -2.0).asDiagonal();
    const Mat x = solve_lyapunov(a, Mat::Identity(2, 2));
    EXPECT_TRUE(x.isApprox(vec2(0.5, 0.25).asDiagonal().toDenseMatrix(), 1e-14));
}

TEST(Lyapunov, RejectsUnstable)
{
    try
    {
        solve_lyapunov(Mat::Constant(1, 1, 1.0), Mat::Ones(1, 1));
        FAIL();
    }
    catch (const Error& e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::not_stable);
    }
}

TEST(Lyapunov, ResidualBoundOnRandomInstances)
{
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial)
    {
        const Index n = 2 + trial % 9;
        const Mat a = lpvred::testing::random_stable_a(rng, n, lpvred::testing::uniform(rng, 0.05, 1.0));
        const Mat r = lpvred::testing::randn(rng, n, n);
        const Mat q = r * r.transpose();
        const LyapunovSolution sol = solve_lyapunov_checked(a, q);
        const double resid = (a * sol.X + sol.X * a.transpose() + q).norm();
        EXPECT_LE(resid, 1e-10 * (a.norm() * sol.X.norm() + q.norm())) << "trial " << trial;
        EXPECT_TRUE(sol.accurate());
        EXPECT_EQ(sol.X, sol.X.transpose());
    }
}

TEST(Gramians, Scalar)
{
    const Gramians g = gramians(first_order_lag());
    EXPECT_NEAR(g.controllability(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(g.observability(0, 0), 0.5, 1e-15);
}

TEST(Gramians, HankelValuesNonnegative)
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial)
    {
        const LtiStateSpace sys = random_stable(rng, 6, 2, 2);
        const Gramians g = gramians(sys);
        const CVec ev = eigenvalues(g.controllability * g.observability);
        const double scale = ev.cwiseAbs().maxCoeff();
        for (Index i = 0; i < ev.size(); ++i)
        {
            EXPECT_GE(ev(i).real(), -1e-10 * scale);
            EXPECT_LE(std::abs(ev(i).imag()), 1e-8 * scale);
        }
    }
}

TEST(Gramians, NoInput)
{
    std::mt19937_64 rng(3);
    LtiStateSpace sys = random_stable(rng, 4, 1, 1);
    sys.B.setZero();
    EXPECT_EQ(gramians(sys).controllability.norm(), 0.0);
}

TEST(HinfNorm, FirstOrderLag)
{
    const HinfNorm h = hinf_norm(first_order_lag());
    EXPECT_NEAR(h.gamma, 1.0, 1e-9);
    EXPECT_NEAR(h.peak_frequency, 0.0, 1e-3);
}

TEST(HinfNorm, Static)
{
    const HinfNorm h = hinf_norm(static_gain(3.0));
    EXPECT_DOUBLE_EQ(h.gamma, 3.0);
    EXPECT_EQ(h.peak_frequency, 0.0);
}

TEST(HinfNorm, LightlyDampedResonance)
{
    // 1/(s^2 + 2 z s + 1): peak 1/(2 z sqrt(1 - z^2)) at sqrt(1 - 2 z^2).
    const double z = 0.01;
    const LtiStateSpace sys((Mat(2, 2) << 0.0, 1.0, -1.0, -2.0 * z).finished(),
                            (Mat(2, 1) << 0.0, 1.0).finished(), (Mat(1, 2) << 1.0, 0.0).finished(),
                            Mat::Zero(1, 1));
    const HinfNorm h = hinf_norm(sys, 1e-8);
    EXPECT_NEAR(h.gamma, 1.0 / (2.0 * z * std::sqrt(1.0 - z * z)), 1e-6);
    EXPECT_NEAR(h.peak_frequency, std::sqrt(1.0 - 2.0 * z * z), 1e-4);
}

TEST(HinfNorm, RejectsBadTolerance)
{
    EXPECT_THROW(hinf_norm(first_order_lag(), 0.0), Error);
    EXPECT_THROW(hinf_norm(first_order_lag(), 0.2), Error);
}

TEST(HinfNorm, RejectsUnstable)
{
    const LtiStateSpace sys(Mat::Ones(1, 1), Mat::Ones(1, 1), Mat::Ones(1, 1), Mat::Zero(1, 1));
    EXPECT_THROW(hinf_norm(sys), Error);
}

TEST(HinfNorm, MatchesDenseSweep)
{
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 100; ++trial)
    {
        const Index n = 2 + trial % 9;
        const Index m = 1 + trial % 3, p = 1 + (trial / 3) % 3;
        const LtiStateSpace sys = random_stable(rng, n, m, p, trial % 2 == 0);
        const double gamma = hinf_norm(sys).gamma;
        const double sweep = dense_sweep_hinf(sys, 100000);
        EXPECT_NEAR(gamma, sweep, 1e-4 * sweep) << "trial " << trial;
        EXPECT_GE(gamma, sweep * (1.0 - 1e-12));
    }
}

TEST(HinfNorm, ModalSweepOracleMatchesLuSweep)
{
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 20; ++trial)
    {
        const LtiStateSpace sys = random_stable(rng, 2 + trial % 9, 1 + trial % 3, 1 + trial % 2);
        const double a = lpvred::testing::dense_sweep_hinf(sys, 2000);
        const double b = lpvred::testing::modal_sweep_hinf(sys, 2000);
        EXPECT_NEAR(a, b, 1e-9 * a) << trial;
    }
}

TEST(HinfNorm, PeakFrequencyAttainsGamma)
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial)
    {
        const LtiStateSpace sys = random_stable(rng, 5, 2, 2);
        const HinfNorm h = hinf_norm(sys);
        EXPECT_NEAR(sigma_max_at(sys, h.peak_frequency), h.gamma, 1e-12 * h.gamma);
    }
}

TEST(SigmaResponse, Static)
{
    const Mat d = (Mat(2, 2) << 3.0, 0.0, 0.0, 1.0).finished();
    const Mat s = sigma_response(LtiStateSpace::gain(d), FrequencyGrid::logspace(0.1, 10.0, 4));
    for (Index k = 0; k < 4; ++k)
    {
        EXPECT_DOUBLE_EQ(s(k, 0), 3.0);
        EXPECT_DOUBLE_EQ(s(k, 1), 1.0);
    }
}

TEST(SigmaResponse, FirstOrderLagAtUnitFrequency)
{
    const Mat s = sigma_response(first_order_lag(), FrequencyGrid({1.0}));
    EXPECT_NEAR(s(0, 0), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(SigmaResponse, PolynomialOracle)
{
    std::mt19937_64 rng(99);
    const FrequencyGrid grid = FrequencyGrid::logspace(1e-2, 1e2, 50);
    for (int trial = 0; trial < 20; ++trial)
    {
        const LtiStateSpace sys = random_stable(rng, 2 + trial % 5, 1, 1);
        const Mat s = sigma_response(sys, grid);
        for (std::size_t k = 0; k < grid.size(); ++k)
        {
            const double ref = std::abs(siso_poly_oracle(sys, grid.values()[k]));
            EXPECT_NEAR(s(static_cast<Index>(k), 0), ref, 1e-10 * std::max(1.0, ref));
        }
    }
}

TEST(SigmaResponse, DescendingOrder)
{
    std::mt19937_64 rng(1);
    const LtiStateSpace sys = random_stable(rng, 4, 3, 2);
    const Mat s = sigma_response(sys, FrequencyGrid::logspace(0.1, 10.0, 7));
    ASSERT_EQ(s.cols(), 2);
    for (Index k = 0; k < s.rows(); ++k)
        EXPECT_GE(s(k, 0), s(k, 1));
}

TEST(SigmaResponse, PoleOnAxis)
{
    const LtiStateSpace osc((Mat(2, 2) << 0.0, 1.0, -1.0, 0.0).finished(),
                            (Mat(2, 1) << 0.0, 1.0).finished(), (Mat(1, 2) << 1.0, 0.0).finished(),
                            Mat::Zero(1, 1));
    EXPECT_THROW(sigma_response(osc, FrequencyGrid({1.0})), Error);
}

TEST(FrequencyGrid, Validation)
{
    EXPECT_THROW(FrequencyGrid({}), Error);
    EXPECT_THROW(FrequencyGrid({0.0, 1.0}), Error);
    EXPECT_THROW(FrequencyGrid({2.0, 1.0}), Error);
    EXPECT_THROW(FrequencyGrid({1.0, 1.0}), Error);
    EXPECT_EQ(FrequencyGrid::logspace(1.0, 100.0, 3).values()[1], 10.0);
}

TEST(StepResponse, Static)
{
    const Trajectory t = step_response(static_gain(2.0), 1.0, 0.1);
    ASSERT_EQ(t.steps(), 11);
    EXPECT_TRUE((t.samples.array() == 2.0).all());
}

TEST(StepResponse, FirstOrderLag)
{
    const Trajectory t = step_response(first_order_lag(), 2.0, 0.01);
    EXPECT_NEAR(t.samples(100, 0), 1.0 - std::exp(-1.0), 1e-9);
}

TEST(StepResponse, FinalValueIsDcGain)
{
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 10; ++trial)
    {
        const LtiStateSpace sys = random_stable(rng, 4, 2, 2);
        const Mat a_inv_b = sys.A.fullPivLu().solve(sys.B);
        const Mat dc = sys.D - sys.C * a_inv_b;
        const double horizon = 50.0 / std::abs(spectral_abscissa(sys.A));
        const Trajectory t = step_response(sys, horizon, horizon / 2000.0);
        for (Index j = 0; j < 2; ++j)
            for (Index i = 0; i < 2; ++i)
                EXPECT_NEAR(t.samples(t.steps() - 1, j * 2 + i), dc(i, j), 1e-6);
    }
}

TEST(StepResponse, InvalidArguments)
{
    EXPECT_THROW(step_response(first_order_lag(), 1.0, 0.0), Error);
    EXPECT_THROW(step_response(first_order_lag(), 0.01, 0.1), Error);
}

TEST(Simulate, ZeroInput)
{
    const LpvModel g = build_msd({.N = 3, .n_rho = 1});
    const Index steps = 200;
    Mat rho(steps, 1);
    for (Index k = 0; k < steps; ++k)
        rho(k, 0) = std::sin(0.1 * static_cast<double>(k));
    const Trajectory y = simulate(g, Trajectory(0.05, rho), Trajectory(0.05, Mat::Zero(steps, 1)));
    EXPECT_EQ(y.samples.norm(), 0.0);
}

TEST(Simulate, ConstantRhoMatchesFrozenStep)
{
    const LpvModel g = build_msd({});
    const double dt = 1e-3;
    const Index steps = 20001;
    for (double r : {-1.0, 0.5})
    {
        const Trajectory y = simulate(g, Trajectory(dt, Mat::Constant(steps, 1, r)),
                                      Trajectory(dt, Mat::Ones(steps, 1)));
        const Trajectory ref = step_response(freeze(g, Vec::Constant(1, r)), 20.0, dt);
        ASSERT_EQ(ref.steps(), steps);
        EXPECT_LE((y.samples - ref.samples).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Simulate, FourthOrderConvergence)
{
    const QuietWarnings quiet;
    const LpvModel g = build_msd({});
    const double horizon = 10.0;
    const auto run = [&](double dt) {
        const auto steps = static_cast<Index>(std::lround(horizon / dt)) + 1;
        return simulate(g, Trajectory(dt, Mat::Constant(steps, 1, 0.3)),
                        Trajectory(dt, Mat::Ones(steps, 1)));
    };
    const Trajectory y1 = run(0.1), y2 = run(0.05), y4 = run(0.025);
    double e12 = 0.0, e24 = 0.0;
    for (Index k = 0; k < y1.steps(); ++k)
    {
        e12 = std::max(e12, std::abs(y1.samples(k, 0) - y2.samples(2 * k, 0)));
        e24 = std::max(e24, std::abs(y2.samples(2 * k, 0) - y4.samples(4 * k, 0)));
    }
    const double ratio = e12 / e24;
    EXPECT_GE(ratio, 8.0);
    EXPECT_LE(ratio, 32.0);
}

TEST(Simulate, Validation)
{
    const LpvModel g = build_msd({.N = 2, .n_rho = 1});
    EXPECT_THROW(simulate(g, Trajectory(0.1, Mat::Constant(3, 1, 2.0)),
                          Trajectory(0.1, Mat::Ones(3, 1))),
                 Error);
    EXPECT_THROW(simulate(g, Trajectory(0.1, Mat::Zero(3, 1)), Trajectory(0.2, Mat::Ones(3, 1))),
                 Error);
    EXPECT_THROW(simulate(g, Trajectory(0.1, Mat::Zero(3, 2)), Trajectory(0.1, Mat::Ones(3, 1))),
                 Error);
}

TEST(Simulate, WarnsOnCoarseStep)
{
    int warnings = 0;
    set_warning_handler([&](const std::string&) { ++warnings; });
    const LpvModel g = build_msd({});
    simulate(g, Trajectory(1.0, Mat::Zero(3, 1)), Trajectory(1.0, Mat::Ones(3, 1)));
    set_warning_handler(nullptr);
    EXPECT_EQ(warnings, 1);
}

TEST(GridWorstHinf, SelfDifferenceIsZero)
{
    const LpvModel g = build_msd({.N = 3, .n_rho = 1});
    EXPECT_LE(grid_worst_hinf(difference(g, g), g.box().grid()).gamma, 1e-9);
}

TEST(GridWorstHinf, SinglePoint)
{
    std::mt19937_64 rng(8);
    const LpvModel g = lpvred::testing::random_lpv(rng, 4, 1, 1, 2);
    const Vec rho = vec2(0.3, -0.7);
    const GridHinf w = grid_worst_hinf(g, {rho});
    EXPECT_EQ(w.gamma, hinf_norm(freeze(g, rho)).gamma);
    EXPECT_EQ(w.active_index, 0u);
    EXPECT_EQ(w.active_rho, rho);
}

TEST(GridWorstHinf, MonotoneUnderRefinement)
{
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 10; ++trial)
    {
        const LpvModel g = lpvred::testing::random_lpv(rng, 3, 1, 2, 1);
        std::vector<Vec> grid{Vec::Constant(1, lpvred::testing::uniform(rng, -1.0, 1.0))};
        double prev = grid_worst_hinf(g, grid).gamma;
        for (int k = 0; k < 6; ++k)
        {
            grid.push_back(Vec::Constant(1, lpvred::testing::uniform(rng, -1.0, 1.0)));
            const double next = grid_worst_hinf(g, grid).gamma;
            EXPECT_GE(next, prev);
            prev = next;
        }
    }
}

TEST(GridWorstHinf, FirstIndexTieBreak)
{
    const LpvModel g = LpvModel::from_lti(first_order_lag(), ParameterBox::unit(1));
    const GridHinf w = grid_worst_hinf(g, {Vec::Constant(1, 0.5), Vec::Constant(1, -0.5)});
    EXPECT_EQ(w.active_index, 0u);
}

TEST(GridWorstHinf, DeterministicAcrossThreadCounts)
{
    const LpvModel g = build_msd({.N = 4, .n_rho = 2});
    set_thread_count(1);
    const GridHinf a = grid_worst_hinf(g, g.box().grid());
    set_thread_count(4);
    const GridHinf b = grid_worst_hinf(g, g.box().grid());
    set_thread_count(0);
    EXPECT_EQ(a.gamma, b.gamma);
    EXPECT_EQ(a.active_index, b.active_index);
    EXPECT_EQ(a.active_freq, b.active_freq);
}

TEST(GridWorstHinf, ReportsUnstablePoint)
{
    const LpvModel g(AffineMatrix({Mat::Constant(1, 1, -0.5), Mat::Ones(1, 1)}),
                     AffineMatrix::constant(Mat::Ones(1, 1), 1),
                     AffineMatrix::constant(Mat::Ones(1, 1), 1),
                     AffineMatrix::zero(1, 1, 1), ParameterBox::unit(1));
    try
    {
        grid_worst_hinf(g, g.box().grid());
        FAIL();
    }
    catch (const Error& e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::not_stable);
        EXPECT_NE(std::string(e.what()).find("rho"), std::string::npos);
    }
}
