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

#include <lpvred/certify.hpp>
#include <lpvred/io.hpp>
#include <lpvred/model.hpp>
#include <lpvred/reduction.hpp>

#include "test_util.hpp"

// Seeded sweeps over random model families for the library-wide invariants.

using namespace lpvred;
using lpvred::testing::freq_oracle;
using lpvred::testing::random_lpv;
using lpvred::testing::randn;

namespace
{

class Seeded : public ::testing::TestWithParam<int>
{
protected:
    std::mt19937_64 rng{static_cast<std::uint64_t>(1000 + GetParam())};

    Index pick(Index lo, Index hi)
    {
        return lo + static_cast<Index>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
    }
};

std::vector<double> log_frequencies(int count)
{
    std::vector<double> w;
    for (int i = 0; i < count; ++i)
        w.push_back(std::pow(10.0, -2.0 + 4.0 * i / (count - 1)));
    return w;
}

StructureMask random_mask(std::mt19937_64& rng, Index n, Index m, Index p, int n_rho)
{
    StructureMask mask = StructureMask::full(n, m, p, n_rho);
    mask.kind = MaskKind::custom;
    std::bernoulli_distribution coin(0.6);
    for (std::size_t which = 0; which < 4; ++which)
        for (std::size_t k = 0; k < mask.free[which].size(); ++k)
        {
            Pattern& pat = mask.free[which][k];
            Mat& fixed = mask.fixed[which][k];
            for (Index i = 0; i < pat.rows(); ++i)
                for (Index j = 0; j < pat.cols(); ++j)
                {
                    pat(i, j) = coin(rng);
                    fixed(i, j) = pat(i, j) ? 0.0 : randn(rng, 1, 1)(0, 0);
                }
        }
    return mask;
}

} // namespace

//------------------------------------------------------------------------------
// Model interconnections
//------------------------------------------------------------------------------

class ModelProperties : public Seeded
{
};

TEST_P(ModelProperties, LftRoundTripAndSizeBound)
{
    const Index n = pick(1, 6), m = pick(1, 3), p = pick(1, 3);
    const int n_rho = static_cast<int>(pick(1, 3));
    const LpvModel g = random_lpv(rng, n, m, p, n_rho, 0.3);
    const LftModel lft = to_lft(g);
    EXPECT_LE(lft.q(), n_rho * (n + std::max(m, p)));
    for (const Vec& rho : g.box().grid(3))
    {
        const LtiStateSpace a = eval_lft(lft, g.box().normalize(rho)), b = freeze(g, rho);
        EXPECT_LE((a.A - b.A).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE((a.B - b.B).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE((a.C - b.C).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE((a.D - b.D).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST_P(ModelProperties, DifferenceAndGeneralizedPlantMatchSubtraction)
{
    const Index m = pick(1, 2), p = pick(1, 2);
    const int n_rho = static_cast<int>(pick(0, 2));
    const LpvModel g = random_lpv(rng, pick(2, 6), m, p, n_rho);
    const LpvModel k = random_lpv(rng, pick(1, 3), m, p, n_rho);
    const LpvModel diff = difference(g, k);
    const LpvModel closed = lower_lft(generalized_plant(g), k);
    for (const Vec& rho : g.box().grid(3))
        for (double w : log_frequencies(50))
        {
            const CMat want = freq_oracle(freeze(g, rho), w) - freq_oracle(freeze(k, rho), w);
            const double tol = 1e-10 * std::max(1.0, want.norm());
            EXPECT_LE((freq_oracle(freeze(diff, rho), w) - want).norm(), tol);
            EXPECT_LE((freq_oracle(freeze(closed, rho), w) - want).norm(), tol);
        }
}

INSTANTIATE_TEST_SUITE_P(Sweep, ModelProperties, ::testing::Range(0, 25));

//------------------------------------------------------------------------------
// Structure masks
//------------------------------------------------------------------------------

class MaskProperties : public Seeded
{
};

TEST_P(MaskProperties, PackUnpackIdentityOnConformingModels)
{
    const Index n = pick(1, 5), m = pick(1, 3), p = pick(1, 3);
    const int n_rho = static_cast<int>(pick(0, 2));
    const StructureMask mask = random_mask(rng, n, m, p, n_rho);
    const LpvModel conforming = project(random_lpv(rng, n, m, p, n_rho), mask);
    const Vec theta = pack(conforming, mask);
    EXPECT_EQ(theta.size(), mask.free_count());
    EXPECT_EQ(unpack(theta, mask, conforming.box()), conforming);
    const Vec other = randn(rng, theta.size(), 1);
    EXPECT_EQ(pack(unpack(other, mask, conforming.box()), mask), other);
}

TEST_P(MaskProperties, MaskFileRoundTrip)
{
    const Index n = pick(1, 4);
    const int n_rho = static_cast<int>(pick(0, 2));
    const StructureMask mask = random_mask(rng, n, 1, 2, n_rho);
    io::json v = {{"n", n}, {"n_u", 1}, {"n_y", 2}, {"n_rho", n_rho}};
    const char* names[4] = {"A", "B", "C", "D"};
    for (std::size_t which = 0; which < 4; ++which)
    {
        std::vector<Mat> pattern, fixed;
        for (std::size_t k = 0; k < mask.free[which].size(); ++k)
        {
            pattern.push_back(mask.free[which][k].cast<double>());
            fixed.push_back(mask.fixed[which][k]);
        }
        v[names[which]] = io::to_json(AffineMatrix(pattern));
        v["fixed"][names[which]] = io::to_json(AffineMatrix(fixed));
    }
    const StructureMask back = io::mask_from_json(v);
    for (std::size_t which = 0; which < 4; ++which)
        for (std::size_t k = 0; k < mask.free[which].size(); ++k)
        {
            EXPECT_TRUE((back.free[which][k] == mask.free[which][k]).all());
            EXPECT_EQ(back.fixed[which][k], mask.fixed[which][k]);
        }
}

INSTANTIATE_TEST_SUITE_P(Sweep, MaskProperties, ::testing::Range(0, 50));

//------------------------------------------------------------------------------
// Reduction
//------------------------------------------------------------------------------

class ReductionProperties : public Seeded
{
};

TEST_P(ReductionProperties, DescentAndStructure)
{
    const LpvModel g = random_lpv(rng, pick(4, 6), 1, 1, 1);
    ReductionConfig cfg;
    cfg.order = 2;
    cfg.starts = 2;
    cfg.max_iterations = 25;
    cfg.seed = static_cast<std::uint64_t>(GetParam());
    const ReductionReport full = reduce(g, cfg, StructureMask::full(2, 1, 1, 1));
    const ReductionReport modal = reduce(g, cfg, StructureMask::modal(2, 1, 1, 1));

    for (const ReductionReport* r : {&full, &modal})
    {
        for (std::size_t i = 1; i < r->history.size(); ++i)
            EXPECT_LE(r->history[i], r->history[i - 1]);
        EXPECT_LE(r->grid_error, r->baseline_grid_error * (1.0 + 1e-6));
    }

    // Pinned modal entries are exact zeros (an order-2 modal model is one
    // block, so check with order 3 as well).
    cfg.order = 3;
    cfg.starts = 1;
    const ReductionReport m3 = reduce(g, cfg, StructureMask::modal(3, 1, 1, 1));
    for (int k = 0; k <= 1; ++k)
    {
        const Mat& a = m3.g_red.A().term(k);
        EXPECT_EQ(a(0, 2), 0.0);
        EXPECT_EQ(a(1, 2), 0.0);
        EXPECT_EQ(a(2, 0), 0.0);
        EXPECT_EQ(a(2, 1), 0.0);
    }
}

TEST_P(ReductionProperties, EveryStartDescends)
{
    const LpvModel g = random_lpv(rng, 4, 1, 1, 1);
    const StructureMask mask = StructureMask::full(2, 1, 1, 1);
    const SynthesisProblem prob{generalized_plant(g), g.box().grid(), mask, 1e-6, 1e-6};
    const Vec theta0 = pack(project(reduction_initializer(g, 2).first, mask), mask);
    const Vec noisy = theta0 + 0.1 * randn(rng, theta0.size(), 1);
    const StartResult r = detail::descend(noisy, prob, 20, 1e-9);
    ASSERT_FALSE(r.history.empty());
    for (std::size_t i = 1; i < r.history.size(); ++i)
        EXPECT_LE(r.history[i], r.history[i - 1]);
    EXPECT_EQ(r.value, r.history.back());
}

TEST_P(ReductionProperties, ReportIsThreadCountInvariant)
{
    const LpvModel g = random_lpv(rng, 4, 1, 1, 1);
    ReductionConfig cfg;
    cfg.order = 2;
    cfg.starts = 3;
    cfg.max_iterations = 15;
    std::string reports[2];
    for (int t : {1, 4})
    {
        set_thread_count(t);
        reports[t == 4] = io::to_json(reduce(g, cfg, StructureMask::full(2, 1, 1, 1))).dump();
    }
    set_thread_count(-1);
    EXPECT_EQ(reports[0], reports[1]);
}

INSTANTIATE_TEST_SUITE_P(Sweep, ReductionProperties, ::testing::Range(0, 6));

//------------------------------------------------------------------------------
// Certification
//------------------------------------------------------------------------------

class CertifyProperties : public Seeded
{
};

TEST_P(CertifyProperties, UpperBoundsGridAndTraceIsMonotone)
{
    const LpvModel err = random_lpv(rng, pick(2, 4), 1, 1, 1, 0.05);
    const std::vector<Vec> grid = err.box().grid();
    const CertifyResult c = certify(err, 1e-3, err.box().vertices(), grid);
    EXPECT_GE(c.certified_bound, grid_worst_hinf(err, grid).gamma * (1.0 - 1e-9));
    EXPECT_GE(c.certified_bound, c.grid_lower_bound);
    // Feasible at gamma implies feasible at every larger gamma in the trace.
    for (const auto& [g1, s1] : c.trace)
        for (const auto& [g2, s2] : c.trace)
        {
            if (s1 == LmiStatus::feasible && g2 > g1)
            {
                EXPECT_EQ(s2, LmiStatus::feasible) << g1 << " < " << g2;
            }
        }
}

INSTANTIATE_TEST_SUITE_P(Sweep, CertifyProperties, ::testing::Range(0, 8));
