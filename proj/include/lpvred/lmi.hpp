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

#ifndef LPVRED_LMI_HPP
#define LPVRED_LMI_HPP

#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include <lpvred/core.hpp>

namespace lpvred
{

///
/// One constraint block F(X) = F0 + N^T X M + M^T X N in a symmetric n x n
/// matrix variable X. N and M are n x b, F0 is b x b symmetric.
///
struct LmiBlock
{
    Mat f0;
    Mat n;
    Mat m;

    Index size() const { return f0.rows(); }
    Mat eval(const Mat& x) const
    {
        const Mat nxm = n.transpose() * x * m;
        return symmetrize(f0 + nxm + nxm.transpose());
    }
};

struct LmiProblem
{
    Index n = 0;
    std::vector<LmiBlock> blocks;

    void validate() const
    {
        require(!blocks.empty(), ErrorKind::invalid_argument, "LmiProblem: no blocks");
        for (const LmiBlock& b : blocks)
            require(b.f0.rows() == b.f0.cols() && b.n.rows() == n && b.m.rows() == n &&
                        b.n.cols() == b.f0.rows() && b.m.cols() == b.f0.rows(),
                    ErrorKind::dimension, "LmiProblem: block dimensions are inconsistent");
    }

    double scale() const
    {
        double s = 1.0;
        for (const LmiBlock& b : blocks)
            s = std::max(s, sigma_max(b.f0));
        return s;
    }

    /// Largest eigenvalue over all blocks at X.
    double max_eigenvalue(const Mat& x) const
    {
        double out = -std::numeric_limits<double>::infinity();
        for (const LmiBlock& b : blocks)
        {
            Eigen::SelfAdjointEigenSolver<Mat> es(b.eval(x), Eigen::EigenvaluesOnly);
            out = std::max(out, es.eigenvalues().maxCoeff());
        }
        return out;
    }
};

enum class LmiStatus
{
    feasible,
    infeasible,
    indeterminate
};

inline const char* to_string(LmiStatus s)
{
    switch (s)
    {
    case LmiStatus::feasible: return "feasible";
    case LmiStatus::infeasible: return "infeasible";
    case LmiStatus::indeterminate: return "indeterminate";
    }
    return "unknown";
}

struct LmiOptions
{
    double threshold = 1e-9;       ///< relative to LmiProblem::scale()
    double stall_threshold = 1e-6; ///< infeasibility margin accepted after a Newton stall
    int max_newton   = 4000;
};

struct LmiPhase1Result
{
    LmiStatus status = LmiStatus::indeterminate;
    Mat X;
    double t = 0.0; ///< max eigenvalue over the original blocks at X
    int iterations = 0;
};

namespace detail
{

/// Symmetric basis: index k <-> (a, b), a <= b, E = e_a e_b^T + e_b e_a^T (a != b).
class SymBasis
{
public:
    explicit SymBasis(Index n) : m_n(n)
    {
        for (Index b = 0; b < n; ++b)
            for (Index a = 0; a <= b; ++a)
                m_pairs.emplace_back(a, b);
    }

    Index n() const { return m_n; }
    Index size() const { return static_cast<Index>(m_pairs.size()); }
    const std::pair<Index, Index>& pair(Index k) const
    {
        return m_pairs[static_cast<std::size_t>(k)];
    }

    Mat to_mat(const Vec& v) const
    {
        Mat x = Mat::Zero(m_n, m_n);
        for (Index k = 0; k < size(); ++k)
        {
            const auto [a, b] = pair(k);
            x(a, b) = v(k);
            x(b, a) = v(k);
        }
        return x;
    }

    Vec to_vec(const Mat& x) const
    {
        Vec v(size());
        for (Index k = 0; k < size(); ++k)
            v(k) = x(pair(k).first, pair(k).second);
        return v;
    }

    /// tr(E_k G).
    double inner(Index k, const Mat& g) const
    {
        const auto [a, b] = pair(k);
        return a == b ? g(a, a) : g(a, b) + g(b, a);
    }

    /// tr(E_i P E_j Q).
    double quad(Index i, Index j, const Mat& p, const Mat& q) const
    {
        const auto [a, b] = pair(i);
        const auto [c, d] = pair(j);
        const auto one = [&](Index a1, Index b1) {
            double s = p(b1, c) * q(d, a1);
            if (c != d)
                s += p(b1, d) * q(c, a1);
            return s;
        };
        double s = one(a, b);
        if (a != b)
            s += one(b, a);
        return s;
    }

private:
    Index m_n;
    std::vector<std::pair<Index, Index>> m_pairs;
};

///
/// Log-barrier over z = [svec X; t] (or svec X with t held fixed) for
///   t I - F_k(X) > 0 for every block, X > 0.
/// In homogeneous mode the blocks become t I - (s F0_k + N^T X M + M^T X N)
/// with s = n - tr X > 0 as an extra barrier term, so that X / s solves the
/// original inequalities whenever t < 0.
///
class LmiBarrier
{
public:
    LmiBarrier(const LmiProblem& problem, bool with_t, double t_fixed, bool homogeneous)
        : m_problem(problem), m_basis(problem.n), m_with_t(with_t), m_t_fixed(t_fixed),
          m_homogeneous(homogeneous)
    {
        for (const LmiBlock& b : problem.blocks)
            m_degree += b.size();
        m_degree += problem.n;
        if (homogeneous)
            m_degree += 1;
    }

    const SymBasis& basis() const { return m_basis; }
    Index dim() const { return m_basis.size() + (m_with_t ? 1 : 0); }
    Index degree() const { return m_degree; }
    Mat x_of(const Vec& z) const { return m_basis.to_mat(z.head(m_basis.size())); }
    double t_of(const Vec& z) const { return m_with_t ? z(m_basis.size()) : m_t_fixed; }
    double s_of(const Mat& x) const
    {
        return m_homogeneous ? static_cast<double>(m_problem.n) - x.trace() : 1.0;
    }

    /// Barrier value, or nullopt outside the domain.
    std::optional<double> value(const Vec& z) const
    {
        const Mat x = x_of(z);
        const double t = t_of(z), s = s_of(x);
        if (!(s > 0.0))
            return std::nullopt;
        double phi = m_homogeneous ? -std::log(s) : 0.0;
        for (const LmiBlock& b : m_problem.blocks)
        {
            Mat sm = slack(b, x, s, t);
            Eigen::LLT<Mat> llt(sm);
            if (llt.info() != Eigen::Success)
                return std::nullopt;
            phi -= 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        }
        if (m_problem.n > 0)
        {
            Eigen::LLT<Mat> llt(x);
            if (llt.info() != Eigen::Success)
                return std::nullopt;
            phi -= 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        }
        if (!std::isfinite(phi))
            return std::nullopt;
        return phi;
    }

    /// Gradient and Hessian of the barrier; z must lie in the domain.
    void derivatives(const Vec& z, Vec& g, Mat& h) const
    {
        const Index n = m_problem.n, nx = m_basis.size(), nz = dim();
        const Mat x = x_of(z);
        const double t = t_of(z), s = s_of(x);
        g = Vec::Zero(nz);
        h = Mat::Zero(nz, nz);
        const auto diag_index = [&](Index i) {
            return m_basis.pair(i).first == m_basis.pair(i).second ? 1.0 : 0.0;
        };

        // Per block: H_ij = tr(E_i (Z_j + Z_j^T)) where Z_j is the rank-four
        // product built from columns of P1 = M W N^T, P2 = N W N^T, P3 = M W M^T.
        std::vector<Mat> p1s, p2s, p3s;
        for (const LmiBlock& b : m_problem.blocks)
        {
            const Mat w = slack(b, x, s, t).llt().solve(Mat::Identity(b.size(), b.size()));
            const Mat mw = b.m * w, nw = b.n * w;
            Mat p1 = mw * b.n.transpose();
            const Mat gs = p1 + p1.transpose();
            for (Index i = 0; i < nx; ++i)
                g(i) += m_basis.inner(i, gs);

            Mat wf;
            if (m_homogeneous)
            {
                wf = w * b.f0;
                const Mat v = b.m * (wf * w) * b.n.transpose();
                const Mat vs = v + v.transpose();
                const double wf_tr = wf.trace();
                const double wfwf = (wf * wf).trace();
                for (Index i = 0; i < nx; ++i)
                {
                    const double di = diag_index(i);
                    g(i) -= di * wf_tr;
                    const double vi = m_basis.inner(i, vs);
                    for (Index j = i; j < nx; ++j)
                    {
                        const double dj = diag_index(j);
                        h(i, j) += -di * m_basis.inner(j, vs) - dj * vi + di * dj * wfwf;
                    }
                }
            }
            if (m_with_t)
            {
                const Mat g2 = mw * nw.transpose();
                const Mat gs2 = g2 + g2.transpose();
                const double w2f = m_homogeneous ? (wf * w).trace() : 0.0;
                g(nx) -= w.trace();
                for (Index i = 0; i < nx; ++i)
                    h(i, nx) += diag_index(i) * w2f - m_basis.inner(i, gs2);
                h(nx, nx) += w.squaredNorm();
            }
            p1s.push_back(std::move(p1));
            p2s.push_back(nw * b.n.transpose());
            p3s.push_back(mw * b.m.transpose());
        }

        Mat y;
        if (n > 0)
        {
            y = x.llt().solve(Mat::Identity(n, n));
            for (Index i = 0; i < nx; ++i)
                g(i) -= m_basis.inner(i, y);
        }

        Mat k(n, n), u(n, 4), v(n, 4);
        for (Index j = 0; j < nx; ++j)
        {
            const auto [c, d] = m_basis.pair(j);
            k.setZero();
            for (std::size_t q = 0; q < p1s.size(); ++q)
            {
                const Mat &p1 = p1s[q], &p2 = p2s[q], &p3 = p3s[q];
                u.col(0) = p1.col(c);
                v.col(0) = p1.row(d).transpose();
                u.col(1) = p3.col(c);
                v.col(1) = p2.col(d);
                if (c != d)
                {
                    u.col(2) = p1.col(d);
                    v.col(2) = p1.row(c).transpose();
                    u.col(3) = p3.col(d);
                    v.col(3) = p2.col(c);
                    k.noalias() += u * v.transpose();
                }
                else
                    k.noalias() += u.leftCols(2) * v.leftCols(2).transpose();
            }
            Mat ks = k + k.transpose();
            if (n > 0)
            {
                ks.noalias() += y.col(c) * y.row(d);
                if (c != d)
                    ks.noalias() += y.col(d) * y.row(c);
            }
            for (Index i = 0; i <= j; ++i)
                h(i, j) += m_basis.inner(i, ks);
        }

        if (m_homogeneous)
        {
            for (Index i = 0; i < nx; ++i)
            {
                const double di = diag_index(i);
                g(i) += di / s;
                for (Index j = i; j < nx; ++j)
                    h(i, j) += di * diag_index(j) / (s * s);
            }
        }
        h.triangularView<Eigen::StrictlyLower>() = h.transpose();
    }

private:
    Mat slack(const LmiBlock& b, const Mat& x, double s, double t) const
    {
        const Mat nxm = b.n.transpose() * x * b.m;
        Mat out = -(s * b.f0 + nxm + nxm.transpose());
        out = symmetrize(out);
        out.diagonal().array() += t;
        return out;
    }

    const LmiProblem& m_problem;
    SymBasis m_basis;
    bool m_with_t;
    double m_t_fixed;
    bool m_homogeneous;
    Index m_degree = 0;
};

enum class CenterOutcome
{
    centered,
    stopped,
    failed
};

///
/// Damped Newton on tau * c^T z + barrier(z), starting from a domain point.
/// `stop` is checked after every accepted step.
///
template <class Stop>
CenterOutcome center(const LmiBarrier& barrier, const Vec& c, double tau, Vec& z, int& budget,
                     const Stop& stop, double lambda_tol, double& lambda)
{
    auto phi_at = [&](const Vec& v) -> std::optional<double> {
        const auto b = barrier.value(v);
        if (!b)
            return std::nullopt;
        return tau * c.dot(v) + *b;
    };
    auto phi = phi_at(z);
    if (!phi)
        return CenterOutcome::failed;
    for (int inner = 0; inner < 200; ++inner)
    {
        if (budget-- <= 0)
            return CenterOutcome::failed;
        Vec g;
        Mat h;
        barrier.derivatives(z, g, h);
        g += tau * c;
        Eigen::LLT<Mat> llt(h);
        Vec dz;
        if (llt.info() == Eigen::Success)
            dz = -llt.solve(g);
        else
        {
            Eigen::LDLT<Mat> ldlt(h);
            if (ldlt.info() != Eigen::Success)
                return CenterOutcome::failed;
            dz = -ldlt.solve(g);
        }
        const double dec2 = -g.dot(dz);
        if (!std::isfinite(dec2))
            return CenterOutcome::failed;
        if (dec2 < 0.0)
            return CenterOutcome::failed;
        lambda = std::sqrt(dec2);
        if (lambda <= lambda_tol)
            return CenterOutcome::centered;

        double alpha = 1.0;
        bool accepted = false;
        while (alpha > 1e-14)
        {
            const Vec trial = z + alpha * dz;
            const auto val = phi_at(trial);
            if (val && *val <= *phi - 0.25 * alpha * dec2)
            {
                z = trial;
                phi = val;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted)
            return CenterOutcome::failed;
        if (stop(z))
            return CenterOutcome::stopped;
    }
    return CenterOutcome::failed;
}

/// Bound on c^T z - p* at a point with Newton decrement lambda < 1 for a
/// barrier of parameter nu.
inline double gap_bound(double nu, double lambda, double tau)
{
    return (nu + (lambda + std::sqrt(nu)) * lambda / (1.0 - lambda)) / tau;
}

} // namespace detail

///
/// Phase-one search: minimizes t subject to s F0_k + N^T X M + M^T X N <= t I,
/// X > 0, s > 0 and the gauge tr X + s = n. Feasible means t < -threshold *
/// scale, and X / s then satisfies every original block strictly. Infeasible
/// means the barrier duality gap proves t stays above that level.
///
inline LmiPhase1Result lmi_phase1(const LmiProblem& problem, const LmiOptions& opts = {})
{
    problem.validate();
    const double scale = problem.scale();
    const double thr   = opts.threshold * scale;
    LmiPhase1Result out;
    const Index n = problem.n;

    if (n == 0)
    {
        out.X = Mat(0, 0);
        out.t = problem.max_eigenvalue(out.X);
        out.status = out.t < -thr ? LmiStatus::feasible : LmiStatus::infeasible;
        return out;
    }

    const detail::LmiBarrier barrier(problem, true, 0.0, true);
    const Index nx = barrier.basis().size();
    Vec z(barrier.dim());
    z.head(nx) = barrier.basis().to_vec(0.5 * Mat::Identity(n, n));
    {
        LmiProblem scaled = problem;
        for (LmiBlock& b : scaled.blocks)
            b.f0 *= 0.5 * static_cast<double>(n);
        z(nx) = scaled.max_eigenvalue(barrier.x_of(z)) + scale;
    }
    Vec c = Vec::Zero(barrier.dim());
    c(nx) = 1.0;

    const auto original_x = [&](const Vec& v) {
        const Mat x = barrier.x_of(v);
        return Mat(x / barrier.s_of(x));
    };
    const auto feasible_now = [&](const Vec& v) {
        return barrier.t_of(v) < -thr && problem.max_eigenvalue(original_x(v)) < 0.0;
    };
    const double m = static_cast<double>(barrier.degree());
    double tau = 1.0 / scale;
    int budget = opts.max_newton;
    LmiStatus status = LmiStatus::indeterminate;
    while (true)
    {
        const int before = budget;
        double lambda = 1.0;
        const auto outcome =
            detail::center(barrier, c, tau, z, budget, feasible_now, 0.25, lambda);
        out.iterations += before - budget;
        if (outcome == detail::CenterOutcome::stopped)
        {
            status = LmiStatus::feasible;
            break;
        }
        const double t = barrier.t_of(z);
        const double gap = detail::gap_bound(m, std::min(lambda, 0.25), tau);
        if (outcome == detail::CenterOutcome::failed)
        {
            // Stalls happen as s -> 0, where infeasible levels have t* = 0.
            if (feasible_now(z))
                status = LmiStatus::feasible;
            else if (t - gap > -opts.stall_threshold * scale)
                status = LmiStatus::infeasible;
            break;
        }
        if (t - gap > -thr || (gap < 0.5 * thr && t >= -thr))
        {
            status = LmiStatus::infeasible;
            break;
        }
        tau *= 2.0;
    }
    out.X = original_x(z);
    out.t = problem.max_eigenvalue(out.X);
    out.status = status;
    return out;
}

///
/// Minimizes tr X subject to F_k(X) <= -margin I and X > 0, starting from a
/// strictly feasible x0. Stops when the duality gap falls below rel_gap * tr X.
///
inline Mat lmi_min_trace(const LmiProblem& problem, double margin, const Mat& x0,
                         double rel_gap = 1e-8, int max_newton = 4000)
{
    problem.validate();
    const detail::LmiBarrier barrier(problem, false, -margin, false);
    const Index nx = barrier.basis().size();
    Vec z = barrier.basis().to_vec(x0);
    require(barrier.value(z).has_value(), ErrorKind::invalid_argument,
            "lmi_min_trace: starting point is not strictly feasible");
    Vec c(nx);
    for (Index i = 0; i < nx; ++i)
        c(i) = barrier.basis().pair(i).first == barrier.basis().pair(i).second ? 1.0 : 0.0;
    const double m = static_cast<double>(barrier.degree());
    double tau = m / std::max(x0.trace(), 1e-300);
    int budget = max_newton;
    const auto never = [](const Vec&) { return false; };
    while (true)
    {
        Vec trial = z;
        double lambda = 1.0;
        const auto outcome = detail::center(barrier, c, tau, trial, budget, never, 0.25, lambda);
        if (outcome == detail::CenterOutcome::failed)
        {
            warn("lmi_min_trace: Newton iteration stalled; returning last centered point");
            break;
        }
        z = trial;
        if (detail::gap_bound(m, lambda, tau) <= rel_gap * barrier.x_of(z).trace())
            break;
        tau *= 2.0;
    }
    return barrier.x_of(z);
}

} // namespace lpvred

#endif // LPVRED_LMI_HPP
