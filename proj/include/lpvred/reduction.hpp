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

#ifndef LPVRED_REDUCTION_HPP
#define LPVRED_REDUCTION_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Eigenvalues>

#include <lpvred/analysis.hpp>
#include <lpvred/certify.hpp>
#include <lpvred/lmi.hpp>
#include <lpvred/model.hpp>

namespace lpvred
{

//------------------------------------------------------------------------------
// Balancing
//------------------------------------------------------------------------------

struct BalancingTransform
{
    Mat T;      ///< n_x x r
    Mat Ti;     ///< r x n_x, Ti T = I
    Vec hankel; ///< full spectrum, descending
};

namespace detail
{

/// W = L L^T for symmetric positive semidefinite W.
inline Mat psd_factor(const Mat& w)
{
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(w));
    const Vec lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lam.asDiagonal();
}

} // namespace detail

///
/// Square-root balancing: with Wc = Lc Lc^T, Wo = Lo Lo^T and
/// Lo^T Lc = U S V^T, T = Lc V_n S_n^{-1/2} and Ti = S_n^{-1/2} U_n^T Lo^T.
/// Orders whose trailing Hankel values fall below 1e-12 sigma_1 are lowered
/// with a warning.
///
inline BalancingTransform balancing_transform(const Mat& wc, const Mat& wo, Index n)
{
    require(wc.rows() == wc.cols() && wo.rows() == wc.rows() && wo.cols() == wc.rows(),
            ErrorKind::dimension, "balancing_transform: Gramian dimensions differ");
    require(n >= 1 && n <= wc.rows(), ErrorKind::invalid_argument,
            "balancing_transform: need 1 <= n <= n_x");
    const Mat lc = detail::psd_factor(wc), lo = detail::psd_factor(wo);
    Eigen::JacobiSVD<Mat> svd(lo.transpose() * lc, Eigen::ComputeFullU | Eigen::ComputeFullV);
    BalancingTransform out;
    out.hankel = svd.singularValues();
    Index r = 0;
    while (r < n && out.hankel(r) > 1e-12 * out.hankel(0))
        ++r;
    if (r < n)
    {
        warn("balanced truncation: Hankel value " + std::to_string(r + 1) +
             " is numerically zero; effective order lowered to " + std::to_string(r));
        require(r >= 1, ErrorKind::numerical, "balanced truncation: all Hankel values vanish");
    }
    const Vec s = out.hankel.head(r).cwiseSqrt().cwiseInverse();
    out.T  = lc * svd.matrixV().leftCols(r) * s.asDiagonal();
    out.Ti = s.asDiagonal() * svd.matrixU().leftCols(r).transpose() * lo.transpose();
    return out;
}

struct BalancedTruncation
{
    LtiStateSpace reduced;
    Vec hankel;
};

inline BalancedTruncation balanced_truncate(const LtiStateSpace& sys, Index n)
{
    require(n >= 1 && n <= sys.n_x(), ErrorKind::invalid_argument,
            "balanced_truncate: need 1 <= n <= n_x");
    const Gramians g = gramians(sys);
    const BalancingTransform bt = balancing_transform(g.controllability, g.observability, n);
    return {LtiStateSpace(bt.Ti * sys.A * bt.T, bt.Ti * sys.B, sys.C * bt.T, sys.D), bt.hankel};
}

struct GeneralizedGramians
{
    Mat Wc;
    Mat Wo;
    double margin_c = 0.0; ///< min over vertices of lambda_min(-block), controllability
    double margin_o = 0.0;
};

namespace detail
{

/// [[A W + W A^T, B], [B^T, -I]] per vertex (use A^T, C^T for the dual).
inline LmiProblem gramian_lmi(const std::vector<Mat>& a, const std::vector<Mat>& b)
{
    LmiProblem prob;
    prob.n = a.front().rows();
    for (std::size_t k = 0; k < a.size(); ++k)
    {
        const Index n = prob.n, m = b[k].cols();
        LmiBlock blk{Mat::Zero(n + m, n + m), Mat::Zero(n, n + m), Mat::Zero(n, n + m)};
        blk.f0.topRightCorner(n, m)   = b[k];
        blk.f0.bottomLeftCorner(m, n) = b[k].transpose();
        blk.f0.bottomRightCorner(m, m).diagonal().setConstant(-1.0);
        blk.n.leftCols(n) = Mat::Identity(n, n);
        blk.m.leftCols(n) = a[k].transpose();
        prob.blocks.push_back(std::move(blk));
    }
    return prob;
}

inline std::pair<Mat, double> min_trace_gramian(const LmiProblem& prob,
                                                const std::vector<Vec>& vertices,
                                                const std::vector<Mat>& a, const char* which)
{
    bool constant = true;
    for (std::size_t k = 1; k < prob.blocks.size() && constant; ++k)
        constant = prob.blocks[k].f0 == prob.blocks[0].f0 && prob.blocks[k].m == prob.blocks[0].m;
    if (constant && is_hurwitz(a.front()))
    {
        // One distinct vertex: the Lyapunov solution is the least element,
        // shifted by delta * Y (A Y + Y A^T + I = 0) to make the inequality strict.
        const LmiBlock& blk = prob.blocks.front();
        const Index n = prob.n;
        const Mat am = blk.m.leftCols(n).transpose();
        const Mat b = blk.f0.topRightCorner(n, blk.f0.cols() - n);
        const double delta = 1e-9 * prob.scale() * (1.0 + b.squaredNorm());
        const Mat w = solve_lyapunov(am, b * b.transpose() + delta * Mat::Identity(n, n));
        return {w, -prob.max_eigenvalue(w)};
    }
    const LmiPhase1Result start = lmi_phase1(prob);
    if (start.status != LmiStatus::feasible)
    {
        for (std::size_t k = 0; k < vertices.size(); ++k)
            if (!is_hurwitz(a[k]))
            {
                std::ostringstream msg;
                msg << "generalized_gramians: A is not Hurwitz at vertex rho = ["
                    << vertices[k].transpose() << "]";
                fail(ErrorKind::infeasible, msg.str());
            }
        fail(ErrorKind::infeasible,
             std::string("generalized_gramians: no common ") + which +
                 " Gramian over the vertices (model not quadratically stable); solver status " +
                 to_string(start.status));
    }
    const double margin = std::min(1e-9 * prob.scale(), -0.5 * start.t);
    const Mat w = lmi_min_trace(prob, margin, start.X);
    return {w, -prob.max_eigenvalue(w)};
}

} // namespace detail

///
/// Constant Wc, Wo satisfying the strict Lyapunov inequalities
/// A Wc + Wc A^T + B B^T < 0 and A^T Wo + Wo A + C^T C < 0 at every vertex
/// (in Schur-complement form), each minimizing its trace.
///
inline GeneralizedGramians generalized_gramians(const LpvModel& model,
                                                const std::vector<Vec>& vertices)
{
    require(!vertices.empty(), ErrorKind::invalid_argument, "generalized_gramians: no vertices");
    require(model.n_x() >= 1, ErrorKind::invalid_argument, "generalized_gramians: no states");
    std::vector<Mat> a, at, b, ct;
    for (const Vec& v : vertices)
    {
        const LtiStateSpace s = freeze(model, v);
        a.push_back(s.A);
        at.push_back(s.A.transpose());
        b.push_back(s.B);
        ct.push_back(s.C.transpose());
    }
    GeneralizedGramians out;
    std::tie(out.Wc, out.margin_c) =
        detail::min_trace_gramian(detail::gramian_lmi(a, b), vertices, a, "controllability");
    std::tie(out.Wo, out.margin_o) =
        detail::min_trace_gramian(detail::gramian_lmi(at, ct), vertices, a, "observability");
    return out;
}

namespace detail
{

inline LpvModel transform(const LpvModel& m, const Mat& t, const Mat& ti)
{
    return LpvModel(ti * m.A() * t, ti * m.B(), m.C() * t, m.D(), m.box());
}

} // namespace detail

///
/// Balances with constant generalized Gramians, applies the transform to
/// every affine coefficient and keeps the leading n states. D is unchanged.
/// Parameter-independent models use the exact Lyapunov Gramians.
///
inline LpvModel lpv_balanced_truncate(const LpvModel& model, Index n,
                                      const std::vector<Vec>& vertices)
{
    require(n >= 1 && n <= model.n_x(), ErrorKind::invalid_argument,
            "lpv_balanced_truncate: need 1 <= n <= n_x");
    if (model.is_lti() && is_hurwitz(model.A().constant()))
    {
        // The Lyapunov Gramians are the infimum of the min-trace problem.
        const Gramians g = gramians(freeze_unchecked(model, model.box().center()));
        const BalancingTransform bt = balancing_transform(g.controllability, g.observability, n);
        return detail::transform(model, bt.T, bt.Ti);
    }
    const GeneralizedGramians g = generalized_gramians(model, vertices);
    const BalancingTransform bt = balancing_transform(g.Wc, g.Wo, n);
    return detail::transform(model, bt.T, bt.Ti);
}

//------------------------------------------------------------------------------
// Structure masks
//------------------------------------------------------------------------------

using Pattern = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

enum class MaskKind
{
    full,
    modal,
    custom
};

inline const char* to_string(MaskKind k)
{
    switch (k)
    {
    case MaskKind::full: return "full";
    case MaskKind::modal: return "modal";
    case MaskKind::custom: return "custom";
    }
    return "unknown";
}

///
/// Free/pinned pattern per matrix (A, B, C, D) and per affine term 0..n_rho.
/// Pinned entries take their value from `fixed` (zero unless set).
///
struct StructureMask
{
    MaskKind kind = MaskKind::full;
    Index n = 0, n_u = 0, n_y = 0;
    int n_rho = 0;
    std::array<std::vector<Pattern>, 4> free;
    std::array<std::vector<Mat>, 4> fixed;

    static StructureMask full(Index n, Index n_u, Index n_y, int n_rho)
    {
        require(n >= 1 && n_u >= 1 && n_y >= 1 && n_rho >= 0, ErrorKind::invalid_argument,
                "StructureMask: need n, n_u, n_y >= 1 and n_rho >= 0");
        StructureMask m;
        m.n = n;
        m.n_u = n_u;
        m.n_y = n_y;
        m.n_rho = n_rho;
        for (int which = 0; which < 4; ++which)
        {
            const auto [r, c] = m.shape(which);
            m.free[static_cast<std::size_t>(which)].assign(static_cast<std::size_t>(n_rho) + 1,
                                                           Pattern::Constant(r, c, true));
            m.fixed[static_cast<std::size_t>(which)].assign(static_cast<std::size_t>(n_rho) + 1,
                                                            Mat::Zero(r, c));
        }
        return m;
    }

    /// Diagonal blocks of size two (one trailing block of size one if n is odd).
    static std::vector<Index> modal_blocks(Index n)
    {
        std::vector<Index> sizes(static_cast<std::size_t>(n / 2), 2);
        if (n % 2 == 1)
            sizes.push_back(1);
        return sizes;
    }

    static StructureMask modal(Index n, Index n_u, Index n_y, int n_rho)
    {
        StructureMask m = full(n, n_u, n_y, n_rho);
        m.kind = MaskKind::modal;
        Pattern a = Pattern::Constant(n, n, false);
        Index off = 0;
        for (Index s : modal_blocks(n))
        {
            a.block(off, off, s, s).setConstant(true);
            off += s;
        }
        for (auto& p : m.free[0])
            p = a;
        return m;
    }

    /// Pins every parameter coefficient, leaving a parameter-independent model.
    StructureMask& constant_only()
    {
        for (auto& terms : free)
            for (std::size_t k = 1; k < terms.size(); ++k)
                terms[k].setConstant(false);
        return *this;
    }

    /// Pins D (all terms) to the given values.
    StructureMask& pin_d(const AffineMatrix& d)
    {
        require(d.rows() == n_y && d.cols() == n_u && d.n_rho() == n_rho, ErrorKind::dimension,
                "StructureMask::pin_d: shape mismatch");
        for (int k = 0; k <= n_rho; ++k)
        {
            free[3][static_cast<std::size_t>(k)].setConstant(false);
            fixed[3][static_cast<std::size_t>(k)] = d.term(k);
        }
        return *this;
    }

    std::pair<Index, Index> shape(int which) const
    {
        switch (which)
        {
        case 0: return {n, n};
        case 1: return {n, n_u};
        case 2: return {n_y, n};
        default: return {n_y, n_u};
        }
    }

    Index free_count() const
    {
        Index c = 0;
        for (const auto& terms : free)
            for (const auto& p : terms)
                c += p.count();
        return c;
    }

    void validate() const
    {
        for (int which = 0; which < 4; ++which)
        {
            const auto [r, c] = shape(which);
            const auto& f = free[static_cast<std::size_t>(which)];
            const auto& v = fixed[static_cast<std::size_t>(which)];
            require(f.size() == static_cast<std::size_t>(n_rho) + 1 && v.size() == f.size(),
                    ErrorKind::dimension, "StructureMask: term count differs from n_rho + 1");
            for (std::size_t k = 0; k < f.size(); ++k)
                require(f[k].rows() == r && f[k].cols() == c && v[k].rows() == r &&
                            v[k].cols() == c,
                        ErrorKind::dimension, "StructureMask: pattern shape mismatch");
        }
    }

    void check_model(const LpvModel& m) const
    {
        require(m.n_x() == n && m.n_u() == n_u && m.n_y() == n_y && m.n_rho() == n_rho,
                ErrorKind::dimension,
                "StructureMask: model dimensions do not match the mask (order " +
                    std::to_string(m.n_x()) + " vs " + std::to_string(n) + ")");
    }
};

namespace detail
{

inline const AffineMatrix& matrix_of(const LpvModel& m, int which)
{
    switch (which)
    {
    case 0: return m.A();
    case 1: return m.B();
    case 2: return m.C();
    default: return m.D();
    }
}

/// Collects the free entries of per-term matrices in mask order.
inline Vec gather(const std::array<std::vector<Mat>, 4>& terms, const StructureMask& mask)
{
    Vec out(mask.free_count());
    Index k = 0;
    for (std::size_t which = 0; which < 4; ++which)
        for (std::size_t t = 0; t < mask.free[which].size(); ++t)
        {
            const Pattern& p = mask.free[which][t];
            for (Index j = 0; j < p.cols(); ++j)
                for (Index i = 0; i < p.rows(); ++i)
                    if (p(i, j))
                        out(k++) = terms[which][t](i, j);
        }
    return out;
}

} // namespace detail

/// Sets every pinned entry to its fixed value.
inline LpvModel project(const LpvModel& m, const StructureMask& mask)
{
    mask.validate();
    mask.check_model(m);
    std::array<AffineMatrix, 4> out;
    for (int which = 0; which < 4; ++which)
    {
        std::vector<Mat> terms = detail::matrix_of(m, which).terms();
        const auto w = static_cast<std::size_t>(which);
        for (std::size_t t = 0; t < terms.size(); ++t)
            terms[t] = mask.free[w][t].select(terms[t], mask.fixed[w][t]);
        out[w] = AffineMatrix(std::move(terms));
    }
    return LpvModel(out[0], out[1], out[2], out[3], m.box());
}

inline Vec pack(const LpvModel& m, const StructureMask& mask)
{
    mask.validate();
    mask.check_model(m);
    std::array<std::vector<Mat>, 4> terms;
    for (int which = 0; which < 4; ++which)
    {
        const auto w = static_cast<std::size_t>(which);
        terms[w] = detail::matrix_of(m, which).terms();
        for (std::size_t t = 0; t < terms[w].size(); ++t)
        {
            const Pattern& p = mask.free[w][t];
            for (Index j = 0; j < p.cols(); ++j)
                for (Index i = 0; i < p.rows(); ++i)
                    if (!p(i, j) && terms[w][t](i, j) != mask.fixed[w][t](i, j))
                        fail(ErrorKind::invalid_argument,
                             std::string("pack: pinned entry (") + "ABCD"[which] + ", term " +
                                 std::to_string(t) + ", " + std::to_string(i) + ", " +
                                 std::to_string(j) + ") differs from its fixed value; project first");
        }
    }
    return detail::gather(terms, mask);
}

inline LpvModel unpack(const Vec& theta, const StructureMask& mask, const ParameterBox& box)
{
    mask.validate();
    require(theta.size() == mask.free_count(), ErrorKind::dimension,
            "unpack: theta length does not match the mask");
    require(box.size() == mask.n_rho, ErrorKind::dimension, "unpack: box does not match n_rho");
    std::array<AffineMatrix, 4> out;
    Index k = 0;
    for (std::size_t which = 0; which < 4; ++which)
    {
        std::vector<Mat> terms = mask.fixed[which];
        for (std::size_t t = 0; t < terms.size(); ++t)
        {
            const Pattern& p = mask.free[which][t];
            for (Index j = 0; j < p.cols(); ++j)
                for (Index i = 0; i < p.rows(); ++i)
                    if (p(i, j))
                        terms[t](i, j) = theta(k++);
        }
        out[which] = AffineMatrix(std::move(terms));
    }
    return LpvModel(out[0], out[1], out[2], out[3], box);
}

//------------------------------------------------------------------------------
// Modal coordinates
//------------------------------------------------------------------------------

///
/// Real block-diagonal coordinates of the constant term A_0: one 2x2 block per
/// complex pair, real modes paired into 2x2 slots (one trailing 1x1 slot when
/// the order is odd), slots sorted by descending block
/// controllability * observability. The same transform is applied to every
/// coefficient. The result matches StructureMask::modal block positions.
///
inline LpvModel modal_form(const LpvModel& m)
{
    const Index n = m.n_x();
    require(n >= 1, ErrorKind::invalid_argument, "modal_form: no states");
    const Mat& a = m.A().constant();
    Eigen::EigenSolver<Mat> es(a, true);
    require(es.info() == Eigen::Success, ErrorKind::numerical, "modal_form: eigen failure");

    struct Unit
    {
        Mat cols;
        double weight = 0.0;
    };
    std::vector<Unit> units;
    const double imag_tol = 1e-10 * std::max(1.0, a.norm());
    for (Index i = 0; i < n; ++i)
    {
        const Complex lam = es.eigenvalues()(i);
        const CVec v = es.eigenvectors().col(i);
        if (std::abs(lam.imag()) <= imag_tol)
        {
            Vec r = v.real();
            if (r.norm() < 1e-300)
                r = v.imag();
            units.push_back({r.normalized(), 0.0});
        }
        else if (lam.imag() > 0.0)
        {
            Mat c(n, 2);
            c.col(0) = v.real();
            c.col(1) = v.imag();
            const double s = c.norm();
            units.push_back({c / s, 0.0});
        }
    }
    Mat t(n, 0);
    for (const Unit& u : units)
        t = hstack(t, u.cols);
    Eigen::FullPivLU<Mat> lu(t);
    require(t.cols() == n && lu.isInvertible(), ErrorKind::numerical,
            "modal_form: A_0 is not diagonalizable");

    // Block weights from the frozen Gramians in the unsorted modal coordinates.
    {
        const Mat ti = lu.inverse();
        const LtiStateSpace s(ti * a * t, ti * m.B().constant(), m.C().constant() * t,
                              m.D().constant());
        const bool stable = is_hurwitz(a);
        const Gramians g = stable ? gramians(s) : Gramians{};
        Index off = 0;
        for (Unit& u : units)
        {
            const Index w = u.cols.cols();
            if (stable)
                u.weight = g.controllability.block(off, off, w, w).trace() *
                           g.observability.block(off, off, w, w).trace();
            else
                u.weight = s.B.middleRows(off, w).norm() * s.C.middleCols(off, w).norm();
            off += w;
        }
    }
    std::vector<std::size_t> order(units.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return units[x].weight > units[y].weight;
    });

    // Slots of size two: complex pairs alone, real modes in pairs.
    std::vector<Mat> slots;
    std::optional<std::size_t> pending;
    for (std::size_t idx : order)
    {
        const Unit& u = units[idx];
        if (u.cols.cols() == 2)
            slots.push_back(u.cols);
        else if (pending)
        {
            Mat c(n, 2);
            c.col(0) = slots[*pending].col(0);
            c.col(1) = u.cols.col(0);
            slots[*pending] = c;
            pending.reset();
        }
        else
        {
            pending = slots.size();
            slots.push_back(u.cols);
        }
    }
    // A lone real slot (odd order) must be last.
    if (pending && *pending + 1 != slots.size())
    {
        Mat lone = slots[*pending];
        slots.erase(slots.begin() + static_cast<std::ptrdiff_t>(*pending));
        slots.push_back(lone);
    }
    Mat tt(n, 0);
    for (const Mat& s : slots)
        tt = hstack(tt, s);
    const Mat tti = tt.fullPivLu().inverse();
    return detail::transform(m, tt, tti);
}

//------------------------------------------------------------------------------
// Fixed-structure synthesis engine
//------------------------------------------------------------------------------

struct ReductionConfig
{
    Index order = 4;
    std::vector<Vec> grid; ///< empty: 5 points per parameter over the box
    double rel_tol = 1e-6;
    int max_iterations = 200;
    double step_tolerance = 1e-9;
    double eps_stab = 1e-6;
    int starts = 5;
    std::uint64_t seed = 42;
    bool certify = false;
    double certify_rel_tol = 1e-3;

    void validate() const
    {
        require(order >= 1, ErrorKind::invalid_argument, "ReductionConfig: order must be >= 1");
        require(rel_tol > 0.0 && rel_tol <= 0.1, ErrorKind::invalid_argument,
                "ReductionConfig: rel_tol must lie in (0, 0.1]");
        require(max_iterations >= 0, ErrorKind::invalid_argument,
                "ReductionConfig: max_iterations must be >= 0");
        require(step_tolerance > 0.0, ErrorKind::invalid_argument,
                "ReductionConfig: step_tolerance must be positive");
        require(eps_stab > 0.0, ErrorKind::invalid_argument,
                "ReductionConfig: eps_stab must be positive");
        require(starts >= 1, ErrorKind::invalid_argument, "ReductionConfig: starts must be >= 1");
        require(certify_rel_tol > 0.0 && certify_rel_tol < 1.0, ErrorKind::invalid_argument,
                "ReductionConfig: certify_rel_tol must lie in (0, 1)");
    }
};

inline constexpr double kStabilityPenalty = 1e6;

/// Closed-loop objective data: plant channels, grid and the controller mask.
struct SynthesisProblem
{
    PlantModel plant;
    std::vector<Vec> grid;
    StructureMask mask;
    double rel_tol = 1e-6;
    double eps_stab = 1e-6;

    LpvModel controller(const Vec& theta) const { return unpack(theta, mask, plant.model.box()); }
};

struct ObjectiveValue
{
    double value = 0.0;
    bool stable = false;
    double abscissa = 0.0; ///< worst grid spectral abscissa of the closed loop
    GridHinf active;       ///< valid when stable
    std::vector<HinfNorm> points; ///< per grid point, valid when stable
};

///
/// Grid worst-case H-infinity norm of the frozen loops lower_lft(P(rho), K(rho));
/// when any
/// grid point has spectral abscissa >= -eps_stab the value is
/// 1e6 + worst abscissa instead.
///
inline ObjectiveValue objective(const Vec& theta, const SynthesisProblem& prob)
{
    if (!theta.allFinite())
        return {std::numeric_limits<double>::infinity(), false,
                std::numeric_limits<double>::infinity(), {}, {}};
    const LpvModel k = prob.controller(theta);
    const std::size_t count = prob.grid.size();
    std::vector<LtiStateSpace> loops(count);
    std::vector<double> abscissa(count);
    parallel_for(static_cast<Index>(count), [&](Index i) {
        const auto j = static_cast<std::size_t>(i);
        loops[j] = lower_lft(freeze(prob.plant.model, prob.grid[j]), prob.plant.n_ctrl,
                             prob.plant.n_meas, freeze(k, prob.grid[j]));
        abscissa[j] = spectral_abscissa(loops[j].A);
    });
    ObjectiveValue out;
    out.abscissa = -std::numeric_limits<double>::infinity();
    for (double a : abscissa)
        out.abscissa = std::max(out.abscissa, a);
    if (!(out.abscissa < -prob.eps_stab))
    {
        out.stable = false;
        out.value = kStabilityPenalty + (std::isfinite(out.abscissa) ? out.abscissa : 1e6);
        return out;
    }
    out.stable = true;
    out.points.resize(count);
    parallel_for(static_cast<Index>(count), [&](Index i) {
        const auto j = static_cast<std::size_t>(i);
        out.points[j] = hinf_norm(loops[j], prob.rel_tol);
    });
    for (std::size_t j = 0; j < count; ++j)
        if (j == 0 || out.points[j].gamma > out.active.gamma)
            out.active = {out.points[j].gamma, prob.grid[j], out.points[j].peak_frequency, j};
    out.value = out.active.gamma;
    return out;
}

struct Subgradient
{
    Vec grad;
    bool smooth = true; ///< false when the top singular value is repeated
};

///
/// Derivative of sigma_max(T(j w)) at a frozen (rho, w), with T = P11 + P12 K (I - P22 K)^{-1} P21 and
/// dT = P12 (I - K P22)^{-1} dK (I - P22 K)^{-1} P21.
///
inline Subgradient point_gradient(const Vec& theta, const SynthesisProblem& prob, const Vec& rho,
                                  double w)
{
    const LpvModel k = prob.controller(theta);
    const LtiStateSpace pf = freeze(prob.plant.model, rho);
    const LtiStateSpace kf = freeze(k, rho);
    const Index nc = prob.plant.n_ctrl, nm = prob.plant.n_meas;
    const Index nw = prob.plant.n_w(), nz = prob.plant.n_z(), nk = kf.n_x();
    const bool at_inf = !std::isfinite(w);
    const Complex s(0.0, at_inf ? 0.0 : w);

    const CMat p = at_inf ? CMat(pf.D.cast<Complex>()) : pf.eval(s);
    const CMat kjw = at_inf ? CMat(kf.D.cast<Complex>()) : kf.eval(s);
    const CMat p11 = p.topLeftCorner(nz, nw), p12 = p.topRightCorner(nz, nc);
    const CMat p21 = p.bottomLeftCorner(nm, nw), p22 = p.bottomRightCorner(nm, nc);
    const CMat i_kp = CMat::Identity(nc, nc) - kjw * p22;
    const CMat i_pk = CMat::Identity(nm, nm) - p22 * kjw;
    const CMat l = p12 * i_kp.partialPivLu().inverse();
    const CMat r = i_pk.partialPivLu().solve(p21);
    const CMat t = p11 + l * kjw * p21;

    Eigen::JacobiSVD<CMat> svd(t, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Subgradient out;
    const auto& sv = svd.singularValues();
    if (sv.size() >= 2 && sv(0) - sv(1) <= 1e-8 * std::max(sv(0), 1e-300))
        out.smooth = false;
    const CVec u = svd.matrixU().col(0), v = svd.matrixV().col(0);
    const CVec a = (u.adjoint() * l).transpose(); // nc
    const CVec b = r * v;                         // nm

    CVec ca = CVec::Zero(nk), pb = CVec::Zero(nk);
    if (nk > 0 && !at_inf)
    {
        CMat sia = -kf.A.cast<Complex>();
        sia.diagonal().array() += s;
        const Eigen::PartialPivLU<CMat> lu(sia);
        ca = lu.transpose().solve(kf.C.cast<Complex>().transpose() * a); // (a^T C Phi)^T
        pb = lu.solve(kf.B.cast<Complex>() * b);
    }
    const Mat ga = (ca * pb.transpose()).real();
    const Mat gb = (ca * b.transpose()).real();
    const Mat gc = (a * pb.transpose()).real();
    const Mat gd = (a * b.transpose()).real();

    std::array<std::vector<Mat>, 4> terms;
    const std::array<const Mat*, 4> base{&ga, &gb, &gc, &gd};
    for (std::size_t which = 0; which < 4; ++which)
        for (int c = 0; c <= prob.mask.n_rho; ++c)
            terms[which].push_back((c == 0 ? 1.0 : rho(c - 1)) * *base[which]);
    out.grad = detail::gather(terms, prob.mask);
    return out;
}

inline Subgradient subgradient(const Vec& theta, const SynthesisProblem& prob,
                               const ObjectiveValue& at)
{
    require(at.stable, ErrorKind::invalid_argument, "subgradient: objective is in the penalty branch");
    return point_gradient(theta, prob, at.active.active_rho, at.active.active_freq);
}

struct StartResult
{
    Vec theta;
    double value = 0.0;
    bool stable = false;
    double abscissa = 0.0;
    int iterations = 0;
    std::vector<double> history;
};

namespace detail
{

/// Central differences of the objective value.
inline Vec fd_gradient(const Vec& theta, const SynthesisProblem& prob)
{
    Vec g(theta.size());
    for (Index i = 0; i < theta.size(); ++i)
    {
        const double h = 1e-6 * std::max(1.0, std::abs(theta(i)));
        Vec tp = theta, tm = theta;
        tp(i) += h;
        tm(i) -= h;
        g(i) = (objective(tp, prob).value - objective(tm, prob).value) / (2.0 * h);
    }
    return g;
}

/// Minimum-norm point of the convex hull of the columns of g.
inline Vec min_norm_hull(const Mat& g)
{
    const Index k = g.cols();
    if (k == 1)
        return g.col(0);
    const Mat gram = g.transpose() * g;
    const double l = std::max(gram.diagonal().maxCoeff(), 1e-300) * double(k);
    Vec lam = Vec::Constant(k, 1.0 / double(k));
    for (int it = 0; it < 2000; ++it)
    {
        // Projected gradient step onto the simplex.
        Vec y = lam - (gram * lam) / l;
        Vec u = y;
        std::sort(u.data(), u.data() + k, std::greater<double>());
        double cum = 0.0, shift = 0.0;
        for (Index j = 0; j < k; ++j)
        {
            cum += u(j);
            const double t = (cum - 1.0) / double(j + 1);
            if (u(j) - t > 0.0)
                shift = t;
        }
        const Vec next = (y.array() - shift).cwiseMax(0.0).matrix();
        const double change = (next - lam).lpNorm<1>();
        lam = next;
        if (change < 1e-12)
            break;
    }
    return g * lam;
}

/// Local peaks of sigma_max above `level`, one per crossing interval.
inline std::vector<double> peaks_above(const LtiStateSpace& sys, double level, double fallback)
{
    std::vector<double> ws = hamiltonian_crossings(sys, level);
    std::vector<double> out;
    if (ws.empty())
        return {fallback};
    ws.insert(ws.begin(), 0.0);
    const double top = ws.back();
    ws.push_back(std::max(2.0 * top, top + 1.0));
    for (std::size_t i = 0; i + 1 < ws.size(); ++i)
    {
        const double lo = ws[i], hi = ws[i + 1];
        if (!(hi > lo) || sigma_max_at(sys, 0.5 * (lo + hi)) <= level)
            continue;
        out.push_back(refine_peak(sys, lo, hi).first);
    }
    if (out.empty())
        out.push_back(fallback);
    return out;
}

/// Gradients at every frequency peak within eps * value of the maximum, over
/// all grid points.
inline Mat active_gradients(const Vec& theta, const SynthesisProblem& prob,
                            const ObjectiveValue& f, double eps)
{
    const LpvModel k = prob.controller(theta);
    const double level = f.value * (1.0 - eps);
    Mat g(theta.size(), 0);
    for (std::size_t j = 0; j < f.points.size(); ++j)
    {
        if (f.points[j].gamma < level)
            continue;
        const double peak = f.points[j].peak_frequency;
        const std::vector<double> ws =
            std::isfinite(peak)
                ? peaks_above(lower_lft(freeze(prob.plant.model, prob.grid[j]), prob.plant.n_ctrl,
                                        prob.plant.n_meas, freeze(k, prob.grid[j])),
                              level, peak)
                : std::vector<double>{peak};
        for (double w : ws)
        {
            const Subgradient sg = point_gradient(theta, prob, prob.grid[j], w);
            g.conservativeResize(Eigen::NoChange, g.cols() + 1);
            g.col(g.cols() - 1) = sg.grad;
        }
    }
    return g;
}

///
/// Descent from theta0: BFGS-preconditioned direction with Armijo backtracking
/// (c1 = 1e-4, halving, minimum step 1e-12) on the true objective. When that
/// step fails, the minimum-norm element of the hull of the gradients at the
/// grid points within eps of the maximum is tried for growing eps, then the
/// plain negative subgradient.
///
inline StartResult descend(const Vec& theta0, const SynthesisProblem& prob, int max_iterations,
                           double step_tolerance)
{
    StartResult out;
    Vec theta = theta0;
    ObjectiveValue f = objective(theta, prob);
    out.history.push_back(f.value);
    const Index dim = theta.size();
    Mat hinv = Mat::Identity(dim, dim);
    bool fresh = true;
    bool slow = false;
    Vec g;
    int stalls = 0;

    const auto gradient = [&](const ObjectiveValue& at) -> Vec {
        if (!at.stable)
            return fd_gradient(theta, prob);
        const Subgradient sg = subgradient(theta, prob, at);
        return sg.smooth ? sg.grad : fd_gradient(theta, prob);
    };
    if (dim > 0)
        g = gradient(f);

    const auto line_search = [&](const Vec& d, double slope, std::optional<ObjectiveValue>& next,
                                 Vec& step) {
        for (double alpha = 1.0; alpha >= 1e-12; alpha *= 0.5)
        {
            const Vec cand = theta + alpha * d;
            ObjectiveValue fc;
            try
            {
                fc = objective(cand, prob);
            }
            catch (const Error& e)
            {
                if (e.kind() != ErrorKind::numerical)
                    throw;
                continue;
            }
            if (fc.value <= f.value + 1e-4 * alpha * slope)
            {
                step = alpha * d;
                next = std::move(fc);
                return;
            }
        }
    };
    const auto scaled = [&](const Vec& d) {
        return Vec(d * (0.01 * std::max(1.0, theta.norm()) / d.norm()));
    };

    for (int it = 0; it < max_iterations && dim > 0; ++it)
    {
        if (!(g.norm() > 0.0) || !g.allFinite())
            break;
        std::optional<ObjectiveValue> next;
        Vec step;

        // Quasi-Newton step on the active gradient, skipped after a slow step.
        if (!slow)
        {
            Vec d = -(hinv * g);
            if (!(g.dot(d) < 0.0) || fresh)
            {
                d = scaled(-g);
                fresh = true;
            }
            line_search(d, g.dot(d), next, step);
        }

        // Steepest descent over the near-active grid points.
        bool reset = !next;
        if (!next && f.stable)
            for (double eps : {1e-4, 1e-3, 1e-2, 1e-1})
            {
                const Vec gs = min_norm_hull(active_gradients(theta, prob, f, eps));
                if (!(gs.norm() > 1e-14 * std::max(1.0, g.norm())))
                    break;
                const Vec ds = scaled(-gs);
                line_search(ds, gs.dot(ds), next, step);
                if (next)
                    break;
            }
        if (!next && !fresh)
        {
            const Vec ds = scaled(-g);
            line_search(ds, g.dot(ds), next, step);
        }
        if (reset)
        {
            hinv.setIdentity();
            fresh = true;
        }
        if (!next)
            break;

        const double decrease = f.value - next->value;
        slow = decrease <= 1e-6 * std::abs(f.value) && !slow;
        theta += step;
        f = std::move(*next);
        out.history.push_back(f.value);
        ++out.iterations;
        const Vec g_new = gradient(f);
        const Vec y = g_new - g;
        const double sy = step.dot(y);
        if (sy > 1e-12 * step.norm() * y.norm())
        {
            if (fresh)
            {
                hinv = Mat::Identity(dim, dim) * (sy / y.squaredNorm());
                fresh = false;
            }
            const double rho_b = 1.0 / sy;
            const Mat e = Mat::Identity(dim, dim) - rho_b * step * y.transpose();
            hinv = e * hinv * e.transpose() + rho_b * step * step.transpose();
        }
        g = g_new;

        if (step.norm() <= step_tolerance * (1.0 + theta.norm()) ||
            decrease <= step_tolerance * std::max(std::abs(f.value), 1e-12))
        {
            if (++stalls >= 3)
                break;
        }
        else
            stalls = 0;
    }
    out.theta = theta;
    out.value = f.value;
    out.stable = f.stable;
    out.abscissa = f.abscissa;
    return out;
}

} // namespace detail

struct SynthesisResult
{
    LpvModel k;
    Vec theta;
    double value = 0.0;
    GridHinf active;
    std::vector<double> history; ///< winning start
    int iterations = 0;          ///< winning start
    std::size_t winning_start = 0;
    std::vector<double> start_values;
};

///
/// Multistart minimization of the grid worst-case closed-loop norm over the
/// free entries of K. Start 0 is k0 projected onto the mask; start s > 0 adds
/// N(0, (0.1 * scale)^2) noise from a generator seeded with seed + s, where
/// scale is the RMS of the start-0 parameters. The lowest final value wins,
/// ties going to the lower start index.
///
inline SynthesisResult synthesize(const PlantModel& plant, const LpvModel& k0,
                                  const StructureMask& mask, const ReductionConfig& cfg)
{
    cfg.validate();
    mask.validate();
    mask.check_model(k0);
    require(k0.n_u() == plant.n_meas && k0.n_y() == plant.n_ctrl, ErrorKind::dimension,
            "synthesize: controller does not match the plant channels");
    SynthesisProblem prob{plant, cfg.grid.empty() ? plant.model.box().grid() : cfg.grid, mask,
                          cfg.rel_tol, cfg.eps_stab};
    for (const Vec& rho : prob.grid)
        require(plant.model.box().contains(rho), ErrorKind::out_of_range,
                "synthesize: grid point outside the box");

    const Vec theta0 = pack(project(k0, mask), mask);
    const double scale =
        theta0.size() > 0 ? std::max(theta0.norm() / std::sqrt(double(theta0.size())), 1e-3) : 1.0;

    std::vector<StartResult> results(static_cast<std::size_t>(cfg.starts));
    parallel_for(cfg.starts, [&](Index s) {
        Vec start = theta0;
        if (s > 0)
        {
            std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(s));
            std::normal_distribution<double> noise(0.0, 0.1 * scale);
            for (Index i = 0; i < start.size(); ++i)
                start(i) += noise(rng);
        }
        results[static_cast<std::size_t>(s)] =
            detail::descend(start, prob, cfg.max_iterations, cfg.step_tolerance);
    });

    SynthesisResult out;
    std::optional<std::size_t> best;
    double best_abscissa = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < results.size(); ++s)
    {
        out.start_values.push_back(results[s].value);
        best_abscissa = std::min(best_abscissa, results[s].abscissa);
        if (results[s].stable && (!best || results[s].value < results[*best].value))
            best = s;
    }
    if (!best)
        fail(ErrorKind::not_stable,
             "synthesize: no start reached a stable closed loop on the grid; best spectral "
             "abscissa " +
                 std::to_string(best_abscissa));
    const StartResult& w = results[*best];
    out.theta = w.theta;
    out.k = prob.controller(w.theta);
    const ObjectiveValue f = objective(w.theta, prob);
    out.value = f.value;
    out.active = f.active;
    out.history = w.history;
    out.iterations = w.iterations;
    out.winning_start = *best;
    return out;
}

//------------------------------------------------------------------------------
// Model reduction
//------------------------------------------------------------------------------

struct ReductionReport
{
    LpvModel g_red;
    double grid_error = 0.0;          ///< grid worst-case H-infinity norm (lower bound)
    double baseline_grid_error = 0.0; ///< LPV balanced truncation, before the mask
    std::optional<CertifyResult> certificate;
    int iterations = 0;
    std::vector<double> history;
    Vec active_rho;
    double active_freq = 0.0;
    std::size_t winning_start = 0;
    std::vector<double> start_values;
    std::string mask_kind;
    std::string initializer;
    std::string gramian_objective = "trace(Wc) + trace(Wo)";
};

///
/// Initial reduced model: LPV balanced truncation with generalized Gramians,
/// or frozen balanced truncation at the box center when the model is not
/// quadratically stable.
///
inline std::pair<LpvModel, std::string> reduction_initializer(const LpvModel& g, Index n)
{
    try
    {
        return {lpv_balanced_truncate(g, n, g.box().vertices()), "lpv_balanced_truncation"};
    }
    catch (const Error& e)
    {
        if (e.kind() != ErrorKind::infeasible)
            throw;
        warn(std::string("reduce: ") + e.what() + "; falling back to frozen balanced truncation");
        const BalancedTruncation bt = balanced_truncate(freeze(g, g.box().center()), n);
        return {LpvModel(AffineMatrix::constant(bt.reduced.A, g.n_rho()),
                         AffineMatrix::constant(bt.reduced.B, g.n_rho()),
                         AffineMatrix::constant(bt.reduced.C, g.n_rho()), g.D(), g.box()),
                "frozen_balanced_truncation"};
    }
}

///
/// Reduces g to cfg.order states by minimizing the grid worst-case norm of
/// G - G_red over the free entries of the mask, via the generalized plant
/// [[G, -I], [I, 0]].
///
inline ReductionReport reduce(const LpvModel& g, const ReductionConfig& cfg,
                              const StructureMask& mask)
{
    cfg.validate();
    require(cfg.order <= g.n_x(), ErrorKind::invalid_argument,
            "reduce: order exceeds the model order");
    require(mask.n == cfg.order && mask.n_u == g.n_u() && mask.n_y == g.n_y() &&
                mask.n_rho == g.n_rho(),
            ErrorKind::dimension, "reduce: mask dimensions do not match the reduction");
    const std::vector<Vec> grid = cfg.grid.empty() ? g.box().grid() : cfg.grid;
    for (const Vec& rho : grid)
    {
        require(g.box().contains(rho), ErrorKind::out_of_range, "reduce: grid point outside the box");
        const double a = spectral_abscissa(freeze(g, rho).A);
        if (!(a < 0.0))
        {
            std::ostringstream msg;
            msg << "reduce: model is unstable at rho = [" << rho.transpose() << "]";
            fail(ErrorKind::not_stable, msg.str());
        }
    }

    ReductionReport rep;
    auto [init, init_name] = reduction_initializer(g, cfg.order);
    rep.initializer = init_name;
    rep.baseline_grid_error = grid_worst_hinf(difference(g, init), grid, cfg.rel_tol).gamma;
    if (mask.kind == MaskKind::modal)
        init = modal_form(init);
    rep.mask_kind = to_string(mask.kind);

    // An initializer that already reproduces G leaves nothing to optimize.
    const LpvModel start = project(init, mask);
    const GridHinf init_err = grid_worst_hinf(difference(g, start), grid, cfg.rel_tol);
    const double scale = std::max(1.0, grid_worst_hinf(g, grid, cfg.rel_tol).gamma);
    if (init_err.gamma <= 1e-8 * scale)
    {
        rep.g_red = start;
        rep.grid_error = init_err.gamma;
        rep.history = {init_err.gamma};
        rep.active_rho = init_err.active_rho;
        rep.active_freq = init_err.active_freq;
        rep.start_values = {init_err.gamma};
        if (cfg.certify)
            rep.certificate =
                certify(difference(g, start), cfg.certify_rel_tol, g.box().vertices(), grid);
        return rep;
    }

    ReductionConfig run = cfg;
    run.grid = grid;
    const SynthesisResult res = synthesize(generalized_plant(g), init, mask, run);
    rep.g_red = res.k;
    rep.grid_error = grid_worst_hinf(difference(g, res.k), grid, cfg.rel_tol).gamma;
    rep.iterations = res.iterations;
    rep.history = res.history;
    rep.active_rho = res.active.active_rho;
    rep.active_freq = res.active.active_freq;
    rep.winning_start = res.winning_start;
    rep.start_values = res.start_values;
    if (cfg.certify)
        rep.certificate = certify(difference(g, res.k), cfg.certify_rel_tol, g.box().vertices(), grid);
    return rep;
}

} // namespace lpvred

#endif // LPVRED_REDUCTION_HPP
