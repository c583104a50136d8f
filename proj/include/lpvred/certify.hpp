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

#ifndef LPVRED_CERTIFY_HPP
#define LPVRED_CERTIFY_HPP

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include <lpvred/analysis.hpp>
#include <lpvred/lmi.hpp>
#include <lpvred/model.hpp>

namespace lpvred
{

struct LmiFeasibilityResult
{
    LmiStatus status = LmiStatus::indeterminate;
    bool feasible = false;
    Mat X;
    double margin = 0.0; ///< min over vertices of lambda_min(-block)
    int iterations = 0;
};

namespace detail
{

/// Orthonormal basis of the smallest subspace containing range(B_k) for all k
/// and invariant under every A_k.
inline Mat invariant_span(const std::vector<Mat>& a_terms, const std::vector<Mat>& b_terms,
                          Index n, double tol)
{
    const auto orth = [&](const Mat& m) -> Mat {
        if (m.cols() == 0)
            return Mat(n, 0);
        Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU);
        Index r = 0;
        while (r < svd.singularValues().size() && svd.singularValues()(r) > tol)
            ++r;
        return svd.matrixU().leftCols(r);
    };
    Mat gen(n, 0);
    for (const Mat& b : b_terms)
        gen = hstack(gen, b);
    Mat q = orth(gen);
    while (q.cols() < n)
    {
        Mat ext = q;
        for (const Mat& a : a_terms)
            ext = hstack(ext, a * q);
        const Mat next = orth(ext);
        if (next.cols() == q.cols())
            break;
        q = next;
    }
    return q;
}

} // namespace detail

///
/// Removes states that are unreachable or unobservable for every scheduling
/// trajectory: the reachable subspace is the smallest subspace holding all
/// B-coefficients and invariant under all A-coefficients, and dually for C.
/// Because the subspaces are invariant for every coefficient, the reduced
/// model has exactly the same input-output map as the original.
///
inline LpvModel structural_minimal(const LpvModel& model, double rel_tol = 1e-12)
{
    const Index n = model.n_x();
    if (n == 0)
        return model;
    double scale = 0.0;
    for (const Mat& t : model.A().terms())
        scale = std::max(scale, t.norm());
    for (const Mat& t : model.B().terms())
        scale = std::max(scale, t.norm());
    for (const Mat& t : model.C().terms())
        scale = std::max(scale, t.norm());
    const double tol = rel_tol * std::max(scale, 1e-300);

    const auto project = [](const LpvModel& m, const Mat& q) {
        const Mat qt = q.transpose();
        return LpvModel(qt * m.A() * q, qt * m.B(), m.C() * q, m.D(), m.box());
    };
    const Mat qr = detail::invariant_span(model.A().terms(), model.B().terms(), n, tol);
    const LpvModel reach = project(model, qr);

    std::vector<Mat> at, ct;
    for (const Mat& t : reach.A().terms())
        at.push_back(t.transpose());
    for (const Mat& t : reach.C().terms())
        ct.push_back(t.transpose());
    const Mat qo = detail::invariant_span(at, ct, reach.n_x(), tol);
    return project(reach, qo);
}

///
/// Bounded-real LMI blocks
///   [[A^T X + X A, X B, C^T], [B^T X, -gamma I, D^T], [C, D, -gamma I]]
/// for each frozen system, written as F0 + N^T X M + M^T X N.
///
inline LmiProblem brl_problem(const std::vector<LtiStateSpace>& systems, double gamma)
{
    require(!systems.empty(), ErrorKind::invalid_argument, "brl_problem: no systems");
    LmiProblem prob;
    prob.n = systems.front().n_x();
    for (const LtiStateSpace& s : systems)
    {
        const Index n = s.n_x(), m = s.n_u(), p = s.n_y(), b = n + m + p;
        require(n == prob.n, ErrorKind::dimension, "brl_problem: state dimension differs");
        LmiBlock blk{Mat::Zero(b, b), Mat::Zero(n, b), Mat::Zero(n, b)};
        blk.f0.block(n + m, 0, p, n) = s.C;
        blk.f0.block(0, n + m, n, p) = s.C.transpose();
        blk.f0.block(n + m, n, p, m) = s.D;
        blk.f0.block(n, n + m, m, p) = s.D.transpose();
        blk.f0.block(n, n, m, m).diagonal().setConstant(-gamma);
        blk.f0.block(n + m, n + m, p, p).diagonal().setConstant(-gamma);
        blk.n.leftCols(n) = Mat::Identity(n, n);
        blk.m.leftCols(n) = s.A;
        blk.m.middleCols(n, m) = s.B;
        prob.blocks.push_back(std::move(blk));
    }
    return prob;
}

///
/// Searches for one X > 0 satisfying the bounded-real LMI at every vertex.
/// The LMI is jointly affine in (A, B, C, D), so with affine dependence on rho
/// vertex feasibility certifies the whole box.
///
inline LmiFeasibilityResult brl_feasible(const LpvModel& err, double gamma,
                                         const std::vector<Vec>& vertices,
                                         const LmiOptions& opts = {})
{
    require(gamma > 0.0, ErrorKind::invalid_argument, "brl_feasible: gamma must be positive");
    require(!vertices.empty(), ErrorKind::invalid_argument, "brl_feasible: no vertices");
    std::vector<LtiStateSpace> systems(vertices.size());
    parallel_for(static_cast<Index>(vertices.size()), [&](Index i) {
        systems[static_cast<std::size_t>(i)] = freeze(err, vertices[static_cast<std::size_t>(i)]);
    });
    const LmiProblem prob = brl_problem(systems, gamma);
    const LmiPhase1Result r = lmi_phase1(prob, opts);
    LmiFeasibilityResult out;
    out.status = r.status;
    out.feasible = r.status == LmiStatus::feasible;
    out.X = r.X;
    out.margin = -r.t;
    out.iterations = r.iterations;
    return out;
}

struct CertifyResult
{
    double certified_bound = 0.0;
    double grid_lower_bound = 0.0;
    double margin = 0.0;
    int bisection_steps = 0;
    Index certified_order = 0; ///< states left after structural_minimal
    std::vector<std::pair<double, LmiStatus>> trace;
};

///
/// Certified induced-L2 bound by bisection on gamma between the grid lower
/// bound and the first feasible level found by doubling. Indeterminate solver
/// outcomes count as infeasible.
///
inline CertifyResult certify(const LpvModel& err, double rel_tol,
                             const std::vector<Vec>& vertices,
                             const std::vector<Vec>& grid = {})
{
    require(rel_tol > 0.0 && rel_tol < 1.0, ErrorKind::invalid_argument,
            "certify: rel_tol must lie in (0, 1)");
    constexpr double floor = 1e-9;
    constexpr double cap   = 1048576.0; // 2^20

    CertifyResult out;
    out.grid_lower_bound = grid_worst_hinf(err, grid.empty() ? err.box().grid() : grid).gamma;
    const LpvModel reduced = structural_minimal(err);
    out.certified_order = reduced.n_x();

    double margin = 0.0;
    const auto test = [&](double gamma) {
        const LmiFeasibilityResult r = brl_feasible(reduced, gamma, vertices);
        out.trace.emplace_back(gamma, r.status);
        ++out.bisection_steps;
        if (r.feasible)
            margin = r.margin;
        return r.feasible;
    };

    const double base = std::max(out.grid_lower_bound, floor);
    double lo = out.grid_lower_bound;
    double hi = std::max(out.grid_lower_bound * (1.0 + 0.5 * rel_tol), floor);
    while (!test(hi))
    {
        lo = hi;
        hi *= 2.0;
        if (hi > cap * base)
            fail(ErrorKind::infeasible,
                 "certify: no feasible gamma up to 2^20 times the grid lower bound; the error "
                 "system is not quadratically stable over the vertices");
    }
    while (hi - lo > rel_tol * hi && hi > floor)
    {
        const double mid = 0.5 * (lo + hi);
        if (test(mid))
            hi = mid;
        else
            lo = mid;
    }
    out.certified_bound = hi;
    out.margin = margin;
    return out;
}

inline double certify_bound(const LpvModel& err, double rel_tol, const std::vector<Vec>& vertices,
                            const std::vector<Vec>& grid = {})
{
    return certify(err, rel_tol, vertices, grid).certified_bound;
}

} // namespace lpvred

#endif // LPVRED_CERTIFY_HPP
