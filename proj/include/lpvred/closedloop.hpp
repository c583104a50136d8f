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

#ifndef LPVRED_CLOSEDLOOP_HPP
#define LPVRED_CLOSEDLOOP_HPP

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include <lpvred/analysis.hpp>
#include <lpvred/certify.hpp>
#include <lpvred/model.hpp>
#include <lpvred/reduction.hpp>

namespace lpvred
{

/// Performance weights for the S/KS mixed-sensitivity loop.
struct Weights
{
    LtiStateSpace We; ///< on the tracking error
    LtiStateSpace Wu; ///< on the control signal

    /// We = (s/2 + 0.3) / (s + 1e-4), Wu = 0.1.
    static Weights defaults()
    {
        const double p = 1e-4;
        return {LtiStateSpace(Mat::Constant(1, 1, -p), Mat::Ones(1, 1),
                              Mat::Constant(1, 1, 0.3 - 0.5 * p), Mat::Constant(1, 1, 0.5)),
                LtiStateSpace::gain(Mat::Constant(1, 1, 0.1))};
    }
};

namespace detail
{

/// SISO weights are repeated on every channel.
inline LtiStateSpace broadcast(const LtiStateSpace& w, Index channels, const char* name)
{
    w.validate();
    if (w.n_u() == channels && w.n_y() == channels)
        return w;
    require(w.n_u() == 1 && w.n_y() == 1, ErrorKind::dimension,
            std::string(name) + " must be SISO or square with " + std::to_string(channels) +
                " channels");
    LtiStateSpace out(Mat(0, 0), Mat(0, 0), Mat(0, 0), Mat(0, 0));
    for (Index i = 0; i < channels; ++i)
        out = LtiStateSpace(block_diag(out.A, w.A), block_diag(out.B, w.B), block_diag(out.C, w.C),
                            block_diag(out.D, w.D));
    return out;
}

} // namespace detail

///
/// Generalized plant with inputs [r; u] and outputs [z_e; z_u; e]:
/// e = r - y, z_e = We e, z_u = Wu u. State is [x; x_We; x_Wu]; weight
/// blocks carry no parameter dependence.
///
inline PlantModel mixed_sensitivity_plant(const LpvModel& g, const Weights& w)
{
    const Index nx = g.n_x(), nu = g.n_u(), ny = g.n_y();
    const LtiStateSpace we = detail::broadcast(w.We, ny, "We");
    const LtiStateSpace wu = detail::broadcast(w.Wu, nu, "Wu");
    require(is_hurwitz(we.A) || we.n_x() == 0, ErrorKind::invalid_argument, "We must be stable");
    require(is_hurwitz(wu.A) || wu.n_x() == 0, ErrorKind::invalid_argument, "Wu must be stable");
    const Index ne = we.n_x(), nw = wu.n_x();
    const Index n = nx + ne + nw;
    const Index n_in = ny + nu, n_out = we.n_y() + wu.n_y() + ny;

    std::array<std::vector<Mat>, 4> terms;
    for (int k = 0; k <= g.n_rho(); ++k)
    {
        const bool c0 = k == 0;
        const Mat& ga = g.A().term(k);
        const Mat& gb = g.B().term(k);
        const Mat& gc = g.C().term(k);
        const Mat& gd = g.D().term(k);
        Mat a = Mat::Zero(n, n), b = Mat::Zero(n, n_in), c = Mat::Zero(n_out, n),
            d = Mat::Zero(n_out, n_in);
        a.topLeftCorner(nx, nx) = ga;
        a.block(nx, 0, ne, nx) = -we.B * gc;
        b.block(0, ny, nx, nu) = gb;
        b.block(nx, ny, ne, nu) = -we.B * gd;
        c.block(0, 0, we.n_y(), nx) = -we.D * gc;
        c.block(we.n_y() + wu.n_y(), 0, ny, nx) = -gc;
        d.block(0, ny, we.n_y(), nu) = -we.D * gd;
        d.block(we.n_y() + wu.n_y(), ny, ny, nu) = -gd;
        if (c0)
        {
            a.block(nx, nx, ne, ne) = we.A;
            a.block(nx + ne, nx + ne, nw, nw) = wu.A;
            b.block(nx, 0, ne, ny) = we.B;
            b.block(nx + ne, ny, nw, nu) = wu.B;
            c.block(0, nx, we.n_y(), ne) = we.C;
            c.block(we.n_y(), nx + ne, wu.n_y(), nw) = wu.C;
            d.block(0, 0, we.n_y(), ny) = we.D;
            d.block(we.n_y(), ny, wu.n_y(), nu) = wu.D;
            d.block(we.n_y() + wu.n_y(), 0, ny, ny) = Mat::Identity(ny, ny);
        }
        terms[0].push_back(a);
        terms[1].push_back(b);
        terms[2].push_back(c);
        terms[3].push_back(d);
    }
    return PlantModel{LpvModel(AffineMatrix(terms[0]), AffineMatrix(terms[1]),
                               AffineMatrix(terms[2]), AffineMatrix(terms[3]), g.box()),
                      nu, ny};
}

//------------------------------------------------------------------------------
// Initial controller
//------------------------------------------------------------------------------

///
/// Stabilizing solution of A^T X + X A - X G X + Q = 0 (G = B R^{-1} B^T)
/// from the stable invariant subspace of the Hamiltonian, refined by two
/// Newton-Kleinman steps.
///
inline Mat solve_care(const Mat& a, const Mat& b, const Mat& q, const Mat& r)
{
    const Index n = a.rows();
    require(a.cols() == n && b.rows() == n && q.rows() == n && q.cols() == n &&
                r.rows() == b.cols() && r.cols() == b.cols(),
            ErrorKind::dimension, "solve_care: dimension mismatch");
    const Eigen::LLT<Mat> r_llt(symmetrize(r));
    require(r_llt.info() == Eigen::Success, ErrorKind::invalid_argument,
            "solve_care: R must be positive definite");
    const Mat g = b * r_llt.solve(b.transpose());
    Mat h(2 * n, 2 * n);
    h << a, -g, -q, -a.transpose();
    Eigen::ComplexEigenSolver<CMat> es(h.cast<Complex>(), true);
    require(es.info() == Eigen::Success, ErrorKind::numerical, "solve_care: eigen failure");
    CMat u(2 * n, 0);
    for (Index i = 0; i < 2 * n; ++i)
        if (es.eigenvalues()(i).real() < 0.0)
        {
            u.conservativeResize(Eigen::NoChange, u.cols() + 1);
            u.col(u.cols() - 1) = es.eigenvectors().col(i);
        }
    if (u.cols() != n)
        fail(ErrorKind::numerical,
             "solve_care: Hamiltonian has eigenvalues on the imaginary axis (no stabilizing "
             "solution; check stabilizability and detectability)");
    Eigen::PartialPivLU<CMat> lu(u.topRows(n));
    Mat x = symmetrize((u.bottomRows(n) * lu.inverse()).real());
    for (int it = 0; it < 2; ++it)
    {
        const Mat f = r_llt.solve(b.transpose() * x);
        const Mat acl = a - b * f;
        if (!is_hurwitz(acl))
            break;
        x = symmetrize(solve_lyapunov(acl.transpose(), q + f.transpose() * r * f));
    }
    return x;
}

namespace detail
{

///
/// Observer-based controller for the frozen plant: LQR on the performance
/// outputs and a Kalman filter on the measurements, both regularized by
/// 1e-6 times the identity.
///
inline LtiStateSpace observer_controller(const LtiStateSpace& p, Index n_ctrl, Index n_meas)
{
    const auto pp = partition(p, n_ctrl, n_meas);
    const Index n = p.n_x();
    const double eps = 1e-6;
    const Mat r = pp.D12.transpose() * pp.D12 + eps * Mat::Identity(n_ctrl, n_ctrl);
    const Mat s = pp.C1.transpose() * pp.D12;
    const Mat rinv_st = r.llt().solve(s.transpose());
    const Mat q = symmetrize(pp.C1.transpose() * pp.C1 - s * rinv_st) +
                  eps * Mat::Identity(n, n);
    const Mat x = solve_care(pp.A - pp.B2 * rinv_st, pp.B2, q, r);
    const Mat f = -r.llt().solve(pp.B2.transpose() * x + s.transpose());

    const Mat v = pp.D21 * pp.D21.transpose() + eps * Mat::Identity(n_meas, n_meas);
    const Mat sf = pp.B1 * pp.D21.transpose();
    const Mat vinv_sft = v.llt().solve(sf.transpose());
    const Mat w = symmetrize(pp.B1 * pp.B1.transpose() - sf * vinv_sft) +
                  eps * Mat::Identity(n, n);
    const Mat y = solve_care((pp.A - sf * v.llt().solve(pp.C2)).transpose(), pp.C2.transpose(),
                             w, v);
    const Mat l = -(y * pp.C2.transpose() + sf) * v.inverse();

    return LtiStateSpace(pp.A + pp.B2 * f + l * pp.C2 + l * pp.D22 * f, -l, f,
                         Mat::Zero(n_ctrl, n_meas));
}

/// Splits the state into stable and unstable modal parts: [x_s; x_u].
inline std::pair<LtiStateSpace, Index> stable_split(const LtiStateSpace& sys)
{
    const Index n = sys.n_x();
    Eigen::EigenSolver<Mat> es(sys.A, true);
    require(es.info() == Eigen::Success, ErrorKind::numerical, "stable_split: eigen failure");
    Mat ts(n, 0), tu(n, 0);
    const double tol = 1e-10 * std::max(1.0, sys.A.norm());
    for (Index i = 0; i < n; ++i)
    {
        const Complex lam = es.eigenvalues()(i);
        const CVec v = es.eigenvectors().col(i);
        Mat cols;
        if (std::abs(lam.imag()) <= tol)
            cols = v.real().normalized();
        else if (lam.imag() > 0.0)
        {
            cols.resize(n, 2);
            cols.col(0) = v.real();
            cols.col(1) = v.imag();
        }
        else
            continue;
        if (lam.real() < 0.0)
            ts = hstack(ts, cols);
        else
            tu = hstack(tu, cols);
    }
    const Mat t = hstack(ts, tu);
    Eigen::FullPivLU<Mat> lu(t);
    require(t.cols() == n && lu.isInvertible(), ErrorKind::numerical,
            "stable_split: A is not diagonalizable");
    const Mat ti = lu.inverse();
    Mat a = ti * sys.A * t;
    const Index ns = ts.cols();
    a.topRightCorner(ns, n - ns).setZero();
    a.bottomLeftCorner(n - ns, ns).setZero();
    return {LtiStateSpace(a, ti * sys.B, sys.C * t, sys.D), ns};
}

/// Balanced truncation of the stable part to n - (unstable count) states.
inline LtiStateSpace reduce_stable_part(const LtiStateSpace& sys, Index n)
{
    if (sys.n_x() <= n)
        return sys;
    const auto [split, ns] = stable_split(sys);
    const Index nu = sys.n_x() - ns;
    require(nu <= n, ErrorKind::invalid_argument,
            "controller order " + std::to_string(n) + " is below the number of unstable plant modes (" +
                std::to_string(nu) + ")");
    const LtiStateSpace s(split.A.topLeftCorner(ns, ns), split.B.topRows(ns),
                          split.C.leftCols(ns), split.D);
    LtiStateSpace rs = n - nu > 0 ? balanced_truncate(s, n - nu).reduced
                                  : LtiStateSpace(Mat(0, 0), Mat(0, s.n_u()), Mat(s.n_y(), 0), s.D);
    return LtiStateSpace(block_diag(rs.A, split.A.bottomRightCorner(nu, nu)),
                         vstack(rs.B, split.B.bottomRows(nu)), hstack(rs.C, split.C.rightCols(nu)),
                         s.D);
}

/// Pads with decoupled states at -1 up to order n.
inline LtiStateSpace pad(const LtiStateSpace& k, Index n)
{
    const Index extra = n - k.n_x();
    if (extra <= 0)
        return k;
    return LtiStateSpace(block_diag(k.A, -Mat::Identity(extra, extra)),
                         vstack(k.B, Mat::Zero(extra, k.n_u())), hstack(k.C, Mat::Zero(k.n_y(), extra)),
                         k.D);
}

inline bool stabilizes(const LtiStateSpace& p, Index n_ctrl, Index n_meas, const LtiStateSpace& k)
{
    try
    {
        return is_hurwitz(lower_lft(p, n_ctrl, n_meas, k).A);
    }
    catch (const Error&)
    {
        return false;
    }
}

} // namespace detail

///
/// Start-0 controller of order n_k at the box center: the full-order
/// observer-based controller, balanced-truncated when it is stable and the
/// truncation still stabilizes; otherwise the observer-based controller of the
/// plant reduced to n_k states (stable part balanced-truncated).
///
inline LtiStateSpace initial_controller(const PlantModel& plant, Index n_k)
{
    require(n_k >= 1, ErrorKind::invalid_argument, "initial_controller: order must be >= 1");
    const LtiStateSpace p = freeze(plant.model, plant.model.box().center());
    const Index nc = plant.n_ctrl, nm = plant.n_meas;
    std::optional<LtiStateSpace> first;
    try
    {
        const LtiStateSpace full = detail::observer_controller(p, nc, nm);
        if (full.n_x() <= n_k)
            return detail::pad(full, n_k);
        if (is_hurwitz(full.A))
        {
            const LtiStateSpace k = balanced_truncate(full, n_k).reduced;
            if (detail::stabilizes(p, nc, nm, k))
                return detail::pad(k, n_k);
            first = detail::pad(k, n_k);
        }
    }
    catch (const Error& e)
    {
        if (e.kind() != ErrorKind::numerical && e.kind() != ErrorKind::not_stable)
            throw;
    }
    try
    {
        const LtiStateSpace pr = detail::reduce_stable_part(p, n_k);
        const LtiStateSpace k = detail::pad(detail::observer_controller(pr, nc, nm), n_k);
        if (detail::stabilizes(p, nc, nm, k) || !first)
            return k;
    }
    catch (const Error& e)
    {
        if (!first || e.kind() == ErrorKind::invalid_argument)
            throw;
    }
    return *first;
}

///
/// Fixed-order controller for `plant` through the reduction engine: start 0
/// is initial_controller(plant, order) projected onto the mask (constant
/// coefficients), further starts as in reduce().
///
inline SynthesisResult synthesize_controller(const PlantModel& plant, Index order,
                                             const StructureMask& mask,
                                             const ReductionConfig& cfg)
{
    require(mask.n == order && mask.n_u == plant.n_meas && mask.n_y == plant.n_ctrl &&
                mask.n_rho == plant.model.n_rho(),
            ErrorKind::dimension, "synthesize_controller: mask does not match the controller");
    const LtiStateSpace k0 = initial_controller(plant, order);
    LpvModel k = LpvModel::from_lti(k0, plant.model.box());
    if (mask.kind == MaskKind::modal)
        k = modal_form(k);
    return synthesize(plant, project(k, mask), mask, cfg);
}

//------------------------------------------------------------------------------
// Validation
//------------------------------------------------------------------------------

struct StepMetrics
{
    double steady_state_error = 0.0; ///< |1 - DC| (sigma_max(I - DC) for MIMO)
    double overshoot = 0.0;          ///< relative to the final value
    double settling_time = 0.0;      ///< 2% band
};

struct ClosedLoopReport
{
    std::vector<Vec> grid;
    std::vector<bool> stable;
    std::vector<double> abscissa;
    std::vector<StepMetrics> metrics;
    std::vector<Trajectory> steps;   ///< reference-to-output step per grid point
    double weighted_hinf = std::numeric_limits<double>::infinity(); ///< grid worst
    std::optional<CertifyResult> certificate;
    std::string certificate_note;

    bool stable_on_grid() const
    {
        for (bool s : stable)
            if (!s)
                return false;
        return !stable.empty();
    }
    double worst_steady_state_error() const
    {
        double w = 0.0;
        for (const auto& m : metrics)
            w = std::max(w, m.steady_state_error);
        return w;
    }
    double worst_overshoot() const
    {
        double w = 0.0;
        for (const auto& m : metrics)
            w = std::max(w, m.overshoot);
        return w;
    }
    double worst_settling_time() const
    {
        double w = 0.0;
        for (const auto& m : metrics)
            w = std::max(w, m.settling_time);
        return w;
    }
};

/// Plant with inputs [r; u] and outputs [y; e = r - y] for unity feedback.
inline PlantModel tracking_plant(const LpvModel& g)
{
    const Index nx = g.n_x(), nu = g.n_u(), ny = g.n_y();
    const int n_rho = g.n_rho();
    const auto zeros = [&](Index r, Index c) { return AffineMatrix::zero(r, c, n_rho); };
    const auto eye = [&](Index r) { return AffineMatrix::constant(Mat::Identity(r, r), n_rho); };
    const AffineMatrix b = hstack(zeros(nx, ny), g.B());
    const AffineMatrix c = vstack(g.C(), -g.C());
    const AffineMatrix d = vstack(hstack(zeros(ny, ny), g.D()),
                                  hstack(eye(ny), -g.D()));
    return PlantModel{LpvModel(g.A(), b, c, d, g.box()), nu, ny};
}

inline StepMetrics step_metrics(const LtiStateSpace& cl, const Trajectory& traj)
{
    StepMetrics m;
    const Mat dc = dc_gain(cl);
    const Index p = cl.n_y();
    m.steady_state_error = sigma_max(Mat(Mat::Identity(p, cl.n_u()) - dc));
    for (Index j = 0; j < std::min(p, cl.n_u()); ++j)
    {
        const double final = dc(j, j);
        if (std::abs(final) < 1e-300)
            continue;
        const Eigen::VectorXd y = traj.samples.col(j * p + j);
        m.overshoot = std::max(m.overshoot, std::max(0.0, (y.maxCoeff() - final) / std::abs(final)));
        for (Index k = y.size() - 1; k >= 0; --k)
            if (std::abs(y(k) - final) > 0.02 * std::abs(final))
            {
                m.settling_time = std::max(m.settling_time, traj.time(std::min(k + 1, y.size() - 1)));
                break;
            }
    }
    return m;
}

///
/// Unity-feedback loop u = K (r - y) of g_full with k at every grid point:
/// frozen stability, reference-step responses and metrics, and the grid
/// worst weighted (mixed-sensitivity) norm. With `certify_loop` the
/// reference-to-output loop is certified over the vertices when it stays
/// affine in rho.
///
inline ClosedLoopReport validate(const LpvModel& g_full, const LpvModel& k,
                                 const std::vector<Vec>& grid, double horizon, double dt,
                                 const Weights& weights = Weights::defaults(),
                                 bool certify_loop = false)
{
    require(!grid.empty(), ErrorKind::invalid_argument, "validate: empty grid");
    require(k.n_u() == g_full.n_y() && k.n_y() == g_full.n_u() && k.n_rho() == g_full.n_rho(),
            ErrorKind::dimension, "validate: controller does not match the plant channels");
    for (const Vec& rho : grid)
        require(g_full.box().contains(rho), ErrorKind::out_of_range,
                "validate: grid point outside the box");
    const PlantModel tp = tracking_plant(g_full);
    const PlantModel wp = mixed_sensitivity_plant(g_full, weights);

    ClosedLoopReport rep;
    rep.grid = grid;
    const std::size_t count = grid.size();
    rep.stable.assign(count, false);
    rep.abscissa.assign(count, 0.0);
    rep.metrics.assign(count, {});
    rep.steps.assign(count, {});
    std::vector<double> weighted(count, std::numeric_limits<double>::infinity());
    parallel_for(static_cast<Index>(count), [&](Index i) {
        const auto j = static_cast<std::size_t>(i);
        const LtiStateSpace kf = freeze(k, grid[j]);
        const LtiStateSpace cl = lower_lft(freeze(tp.model, grid[j]), tp.n_ctrl, tp.n_meas, kf);
        rep.abscissa[j] = spectral_abscissa(cl.A);
        rep.stable[j] = rep.abscissa[j] < 0.0;
        rep.steps[j] = step_response(cl, horizon, dt);
        if (!rep.stable[j])
        {
            const double inf = std::numeric_limits<double>::infinity();
            rep.metrics[j] = {inf, inf, inf};
            return;
        }
        rep.metrics[j] = step_metrics(cl, rep.steps[j]);
        const LtiStateSpace wl = lower_lft(freeze(wp.model, grid[j]), wp.n_ctrl, wp.n_meas, kf);
        if (is_hurwitz(wl.A))
            weighted[j] = hinf_norm(wl).gamma;
    });
    rep.weighted_hinf = 0.0;
    for (double w : weighted)
        rep.weighted_hinf = std::max(rep.weighted_hinf, w);

    if (certify_loop)
    {
        try
        {
            const LpvModel cl = lower_lft(tp, k);
            rep.certificate = certify(cl, 1e-3, g_full.box().vertices(), grid);
        }
        catch (const Error& e)
        {
            if (e.kind() != ErrorKind::unsupported && e.kind() != ErrorKind::infeasible &&
                e.kind() != ErrorKind::not_stable)
                throw;
            rep.certificate_note = std::string("not certified: ") + e.what();
        }
    }
    return rep;
}

} // namespace lpvred

#endif // LPVRED_CLOSEDLOOP_HPP
