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

///
/// \file analysis.hpp
///
/// Linear systems analysis: stability, Lyapunov equations and Gramians, the
/// H-infinity norm, frequency and step responses, and fixed-step simulation
/// of LPV models along scheduling trajectories.
///
#ifndef LPVRED_ANALYSIS_HPP
#define LPVRED_ANALYSIS_HPP

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <lpvred/core.hpp>
#include <lpvred/model.hpp>

namespace lpvred
{

//------------------------------------------------------------------------------
// Data types
//------------------------------------------------------------------------------

class FrequencyGrid
{
public:
    explicit FrequencyGrid(std::vector<double> omegas) : m_omegas(std::move(omegas))
    {
        require(!m_omegas.empty(), ErrorKind::invalid_argument, "FrequencyGrid: empty");
        require(m_omegas.front() > 0.0, ErrorKind::invalid_argument,
                "FrequencyGrid: frequencies must be positive");
        for (std::size_t i = 1; i < m_omegas.size(); ++i)
            require(m_omegas[i] > m_omegas[i - 1], ErrorKind::invalid_argument,
                    "FrequencyGrid: frequencies must be strictly increasing");
    }

    static FrequencyGrid logspace(double lo, double hi, int count)
    {
        require(lo > 0.0 && hi > lo && count >= 2, ErrorKind::invalid_argument,
                "logspace: need 0 < lo < hi and count >= 2");
        std::vector<double> w(static_cast<std::size_t>(count));
        const double a = std::log10(lo), b = std::log10(hi);
        for (int i = 0; i < count; ++i)
            w[static_cast<std::size_t>(i)] = std::pow(10.0, a + (b - a) * i / (count - 1));
        return FrequencyGrid(std::move(w));
    }

    const std::vector<double>& values() const { return m_omegas; }
    std::size_t size() const { return m_omegas.size(); }

private:
    std::vector<double> m_omegas;
};

///
/// Uniformly sampled signals: row k holds all channels at t = k * dt.
///
struct Trajectory
{
    double dt = 0.0;
    Mat samples;

    Trajectory() = default;
    Trajectory(double step, Mat values) : dt(step), samples(std::move(values))
    {
        require(dt > 0.0, ErrorKind::invalid_argument, "Trajectory: dt must be positive");
    }

    Index steps() const { return samples.rows(); }
    Index channels() const { return samples.cols(); }
    double time(Index k) const { return dt * static_cast<double>(k); }
};

//------------------------------------------------------------------------------
// Stability
//------------------------------------------------------------------------------

inline CVec eigenvalues(const Mat& a)
{
    require(a.rows() == a.cols(), ErrorKind::dimension, "eigenvalues: matrix must be square");
    if (a.rows() == 0)
        return CVec(0);
    Eigen::EigenSolver<Mat> es(a, false);
    if (es.info() != Eigen::Success)
        fail(ErrorKind::numerical, "eigenvalue iteration did not converge");
    return es.eigenvalues();
}

/// Largest real part over the spectrum; -inf for an empty matrix.
inline double spectral_abscissa(const Mat& a)
{
    const CVec ev = eigenvalues(a);
    double out = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < ev.size(); ++i)
        out = std::max(out, ev(i).real());
    return out;
}

inline bool is_hurwitz(const Mat& a) { return spectral_abscissa(a) < 0.0; }

//------------------------------------------------------------------------------
// Lyapunov equations
//------------------------------------------------------------------------------

struct LyapunovSolution
{
    Mat X;
    double residual = 0.0;   ///< ||A X + X A^T + Q||_F
    double tolerance = 0.0;  ///< 1e-10 (||A|| ||X|| + ||Q||)
    bool accurate() const { return residual <= tolerance; }
};

///
/// Solves A X + X A^T + Q = 0 for Hurwitz A by the Bartels-Stewart method on
/// the complex Schur form A = U T U^H.
///
inline LyapunovSolution solve_lyapunov_checked(const Mat& a, const Mat& q)
{
    require(a.rows() == a.cols() && q.rows() == a.rows() && q.cols() == a.rows(),
            ErrorKind::dimension, "solve_lyapunov: dimension mismatch");
    const Index n = a.rows();
    if (n == 0)
        return {Mat(0, 0), 0.0, 0.0};
    const double alpha = spectral_abscissa(a);
    if (!(alpha < 0.0))
        fail(ErrorKind::not_stable,
             "solve_lyapunov: A is not Hurwitz (spectral abscissa " + std::to_string(alpha) + ")");

    Eigen::ComplexSchur<CMat> schur(a.cast<Complex>());
    if (schur.info() != Eigen::Success)
        fail(ErrorKind::numerical, "solve_lyapunov: Schur decomposition failed");
    const CMat& t = schur.matrixT();
    const CMat& u = schur.matrixU();

    // T Y + Y T^H = F with F = -U^H Q U, solved column by column from the last.
    const CMat f = -(u.adjoint() * q.cast<Complex>() * u);
    CMat y = CMat::Zero(n, n);
    for (Index j = n - 1; j >= 0; --j)
    {
        CVec rhs = f.col(j);
        for (Index k = j + 1; k < n; ++k)
            rhs -= std::conj(t(j, k)) * y.col(k);
        CMat lhs = t;
        lhs.diagonal().array() += std::conj(t(j, j));
        y.col(j) = lhs.triangularView<Eigen::Upper>().solve(rhs);
    }
    Mat x = symmetrize((u * y * u.adjoint()).real());

    LyapunovSolution sol;
    sol.residual  = (a * x + x * a.transpose() + q).norm();
    sol.tolerance = 1e-10 * (a.norm() * x.norm() + q.norm());
    sol.X         = std::move(x);
    return sol;
}

inline Mat solve_lyapunov(const Mat& a, const Mat& q)
{
    LyapunovSolution sol = solve_lyapunov_checked(a, q);
    if (!sol.accurate())
        warn("solve_lyapunov: ill-conditioned solve, residual " + std::to_string(sol.residual) +
             " exceeds " + std::to_string(sol.tolerance));
    return std::move(sol.X);
}

struct Gramians
{
    Mat controllability;
    Mat observability;
};

inline Gramians gramians(const LtiStateSpace& sys)
{
    return {solve_lyapunov(sys.A, sys.B * sys.B.transpose()),
            solve_lyapunov(sys.A.transpose(), sys.C.transpose() * sys.C)};
}

//------------------------------------------------------------------------------
// Frequency domain
//------------------------------------------------------------------------------

/// Largest singular value of the transfer matrix at j*omega.
inline double sigma_max_at(const LtiStateSpace& sys, double omega)
{
    return sigma_max(sys.freqresp(omega));
}

/// Row k: singular values of G(j w_k) in descending order.
inline Mat sigma_response(const LtiStateSpace& sys, const FrequencyGrid& grid)
{
    const Index nsv = std::min(sys.n_y(), sys.n_u());
    Mat out(static_cast<Index>(grid.size()), nsv);
    for (std::size_t k = 0; k < grid.size(); ++k)
    {
        const double w = grid.values()[k];
        if (sys.n_x() > 0)
        {
            CMat jwa = -sys.A.cast<Complex>();
            jwa.diagonal().array() += Complex(0.0, w);
            Eigen::PartialPivLU<CMat> lu(jwa);
            if (!(std::abs(lu.determinant()) > 0.0) ||
                !std::isfinite(std::abs(lu.determinant())))
                fail(ErrorKind::numerical, "sigma_response: pole on the imaginary axis at w = " +
                                               std::to_string(w));
        }
        if (nsv == 0)
            continue;
        Eigen::JacobiSVD<CMat> svd(sys.freqresp(w));
        out.row(static_cast<Index>(k)) = svd.singularValues().transpose();
    }
    return out;
}

inline Mat dc_gain(const LtiStateSpace& sys)
{
    if (sys.n_x() == 0)
        return sys.D;
    Eigen::FullPivLU<Mat> lu(sys.A);
    require(lu.isInvertible(), ErrorKind::numerical, "dc_gain: A is singular");
    return sys.D - sys.C * lu.solve(sys.B);
}

struct HinfNorm
{
    double gamma = 0.0;
    double peak_frequency = 0.0; ///< rad/s; +inf when attained only as w -> inf
};

namespace detail
{

/// Frequencies of the (numerically) imaginary eigenvalues of the Hamiltonian
/// associated with level gamma > sigma_max(D).
inline std::vector<double> hamiltonian_crossings(const LtiStateSpace& sys, double gamma)
{
    const Index n = sys.n_x(), m = sys.n_u(), p = sys.n_y();
    const Mat& a = sys.A;
    const Mat& b = sys.B;
    const Mat& c = sys.C;
    const Mat& d = sys.D;
    const Mat r = d.transpose() * d - gamma * gamma * Mat::Identity(m, m);
    const Mat s = d * d.transpose() - gamma * gamma * Mat::Identity(p, p);
    const Eigen::LDLT<Mat> r_ldlt(r);
    const Eigen::LDLT<Mat> s_ldlt(s);

    Mat h(2 * n, 2 * n);
    const Mat rinv_dtc = r_ldlt.solve(d.transpose() * c);
    const Mat rinv_bt  = r_ldlt.solve(b.transpose());
    h.topLeftCorner(n, n)     = a - b * rinv_dtc;
    h.topRightCorner(n, n)    = -gamma * b * rinv_bt;
    h.bottomLeftCorner(n, n)  = gamma * c.transpose() * s_ldlt.solve(c);
    h.bottomRightCorner(n, n) = -a.transpose() + c.transpose() * d * rinv_bt;

    Eigen::EigenSolver<Mat> es(h, false);
    if (es.info() != Eigen::Success)
        fail(ErrorKind::numerical, "hinf_norm: Hamiltonian eigenvalues did not converge");
    const double tol = 1e-8 * std::max(h.norm(), 1e-300);
    std::vector<double> out;
    for (Index i = 0; i < es.eigenvalues().size(); ++i)
    {
        const Complex lam = es.eigenvalues()(i);
        if (std::abs(lam.real()) <= tol && lam.imag() >= 0.0)
            out.push_back(lam.imag());
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Golden-section maximization of sigma_max on [lo, hi].
inline std::pair<double, double> refine_peak(const LtiStateSpace& sys, double lo, double hi)
{
    constexpr double inv_phi = 0.6180339887498949;
    double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
    double f1 = sigma_max_at(sys, x1), f2 = sigma_max_at(sys, x2);
    for (int it = 0; it < 80 && hi - lo > 1e-13 * std::max(1.0, hi); ++it)
    {
        if (f1 >= f2)
        {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = sigma_max_at(sys, x1);
        }
        else
        {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = sigma_max_at(sys, x2);
        }
    }
    return f1 >= f2 ? std::make_pair(x1, f1) : std::make_pair(x2, f2);
}

} // namespace detail

///
/// H-infinity norm by bisection on gamma with the Hamiltonian imaginary-axis
/// test. The lower end of the bracket is always a value of sigma_max attained
/// at a known frequency, raised at every step from the crossing frequencies
/// (after a raise the next test sits just above the new lower end);
/// the reported gamma is that lower end after the bracket closes to rel_tol
/// and a local golden-section polish of the peak.
///
inline HinfNorm hinf_norm(const LtiStateSpace& sys, double rel_tol = 1e-6,
                          const std::vector<double>& hint_frequencies = {})
{
    require(rel_tol > 0.0 && rel_tol <= 0.1, ErrorKind::invalid_argument,
            "hinf_norm: rel_tol must lie in (0, 0.1]");
    const double d_norm = sigma_max(sys.D);
    if (sys.n_x() == 0 || sys.n_u() == 0 || sys.n_y() == 0)
        return {d_norm, 0.0};

    const CVec poles = eigenvalues(sys.A);
    double alpha = -std::numeric_limits<double>::infinity();
    double wmin = std::numeric_limits<double>::infinity(), wmax = 0.0;
    for (Index i = 0; i < poles.size(); ++i)
    {
        alpha = std::max(alpha, poles(i).real());
        const double mag = std::abs(poles(i));
        if (mag > 0.0)
        {
            wmin = std::min(wmin, mag);
            wmax = std::max(wmax, mag);
        }
    }
    if (!(alpha < 0.0))
        fail(ErrorKind::not_stable,
             "hinf_norm: A is not Hurwitz (spectral abscissa " + std::to_string(alpha) + ")");
    if (!std::isfinite(wmin))
        wmin = wmax = 1.0;

    double lo = d_norm;
    double peak = std::numeric_limits<double>::infinity();
    const auto probe = [&](double w) {
        if (!(w >= 0.0) || !std::isfinite(w))
            return;
        const double s = sigma_max_at(sys, w);
        if (s > lo)
        {
            lo   = s;
            peak = w;
        }
    };
    probe(0.0);
    for (int i = 0; i < 9; ++i)
        probe(wmin * 0.1 * std::pow(100.0 * wmax / wmin, i / 8.0));
    for (Index i = 0; i < poles.size(); ++i)
    {
        probe(std::abs(poles(i).imag()));
        probe(std::abs(poles(i)));
    }
    for (double w : hint_frequencies)
        probe(w);

    const double scale = std::max(1.0, sys.A.norm() + sys.B.norm() + sys.C.norm() + d_norm);
    if (lo <= 1e-14 * scale)
    {
        if (sys.B.isZero(0.0) || sys.C.isZero(0.0))
            return {lo, std::isfinite(peak) ? peak : 0.0};
    }

    double hi = lo + 2.0 * sys.C.norm() * sys.B.norm() / std::abs(alpha);
    if (!(hi > lo))
        hi = lo * (1.0 + 2.0 * rel_tol) + 1e-300;
    for (int guard = 0; !detail::hamiltonian_crossings(sys, hi).empty(); ++guard)
    {
        require(guard < 200, ErrorKind::numerical, "hinf_norm: failed to bracket the norm");
        hi = lo + 2.0 * (hi - lo);
    }

    const double abs_floor = 1e-15 * scale;
    bool raised = lo > abs_floor;
    for (int iter = 0; iter < 200 && hi - lo > rel_tol * lo && hi > abs_floor; ++iter)
    {
        const double mid = hi > 2.0 * lo && lo > abs_floor ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
        const double gamma = raised ? std::min(mid, lo * (1.0 + 1.5 * rel_tol)) : mid;
        raised = false;
        const std::vector<double> ws = detail::hamiltonian_crossings(sys, gamma);
        if (ws.empty())
        {
            hi = gamma;
            continue;
        }
        double best = -1.0, best_w = 0.0;
        const auto consider = [&](double w) {
            const double s = sigma_max_at(sys, w);
            if (s > best)
            {
                best   = s;
                best_w = w;
            }
        };
        for (std::size_t i = 0; i < ws.size(); ++i)
        {
            consider(ws[i]);
            if (i + 1 < ws.size())
                consider(0.5 * (ws[i] + ws[i + 1]));
        }
        if (ws.size() == 1)
            consider(0.0);
        if (best > lo)
        {
            lo   = best;
            peak = best_w;
            raised = true;
        }
        // Crossings flagged within tolerance but no frequency reaches gamma.
        if (best < gamma * (1.0 - 1e-9))
            hi = gamma;
        hi = std::max(hi, lo);
    }

    if (std::isfinite(peak))
    {
        const double width = std::max(0.02 * peak, 1e-3 * wmin);
        const auto [w_ref, s_ref] =
            detail::refine_peak(sys, std::max(0.0, peak - width), peak + width);
        if (s_ref > lo)
        {
            lo   = s_ref;
            peak = w_ref;
        }
    }
    return {lo, peak};
}

//------------------------------------------------------------------------------
// Time domain
//------------------------------------------------------------------------------

///
/// Unit-step responses by exact zero-order-hold discretization. Channel
/// (j * n_y + i) holds output i for a step on input j.
///
inline Trajectory step_response(const LtiStateSpace& sys, double horizon, double dt)
{
    require(dt > 0.0 && horizon >= dt, ErrorKind::invalid_argument,
            "step_response: need dt > 0 and horizon >= dt");
    const Index n = sys.n_x(), m = sys.n_u(), p = sys.n_y();
    const auto steps = static_cast<Index>(std::floor(horizon / dt + 1e-9)) + 1;

    Mat phi = Mat::Identity(n, n), gam = Mat::Zero(n, m);
    if (n > 0)
    {
        Mat aug = Mat::Zero(n + m, n + m);
        aug.topLeftCorner(n, n)  = sys.A * dt;
        aug.topRightCorner(n, m) = sys.B * dt;
        const Mat e = aug.exp();
        phi = e.topLeftCorner(n, n);
        gam = e.topRightCorner(n, m);
    }

    Mat out(steps, p * m);
    for (Index j = 0; j < m; ++j)
    {
        Vec x = Vec::Zero(n);
        for (Index k = 0; k < steps; ++k)
        {
            out.block(k, j * p, 1, p) = (sys.C * x + sys.D.col(j)).transpose();
            x = phi * x + gam.col(j);
        }
    }
    return Trajectory(dt, std::move(out));
}

///
/// Fixed-step RK4 integration of the LPV model from zero initial state.
/// Scheduling and input samples are interpolated linearly between steps.
///
inline Trajectory simulate(const LpvModel& model, const Trajectory& rho_traj,
                           const Trajectory& u_traj)
{
    require(rho_traj.dt == u_traj.dt, ErrorKind::invalid_argument,
            "simulate: rho and u trajectories must share dt");
    require(rho_traj.steps() == u_traj.steps() && u_traj.steps() >= 1,
            ErrorKind::invalid_argument, "simulate: rho and u trajectories must share length");
    require(rho_traj.channels() == model.n_rho(), ErrorKind::dimension,
            "simulate: rho channels must equal n_rho");
    require(u_traj.channels() == model.n_u(), ErrorKind::dimension,
            "simulate: u channels must equal n_u");

    const double dt  = u_traj.dt;
    const Index steps = u_traj.steps();
    for (Index k = 0; k < steps; ++k)
        if (!model.box().contains(rho_traj.samples.row(k).transpose()))
            fail(ErrorKind::out_of_range,
                 "simulate: rho sample " + std::to_string(k) + " outside the box");

    double max_eig = 0.0;
    for (const Vec& v : model.box().grid())
    {
        const CVec ev = eigenvalues(model.A()(v));
        for (Index i = 0; i < ev.size(); ++i)
            max_eig = std::max(max_eig, std::abs(ev(i)));
    }
    if (dt * max_eig > 0.1)
        warn("simulate: dt * max|eig| = " + std::to_string(dt * max_eig) +
             " exceeds 0.1; results may be inaccurate");

    const Index n = model.n_x();
    const auto rho_at = [&](Index k, double frac) -> Vec {
        if (k + 1 >= steps)
            return rho_traj.samples.row(steps - 1).transpose();
        return ((1.0 - frac) * rho_traj.samples.row(k) + frac * rho_traj.samples.row(k + 1))
            .transpose();
    };
    const auto u_at = [&](Index k, double frac) -> Vec {
        if (k + 1 >= steps)
            return u_traj.samples.row(steps - 1).transpose();
        return ((1.0 - frac) * u_traj.samples.row(k) + frac * u_traj.samples.row(k + 1))
            .transpose();
    };
    const auto f = [&](const Vec& x, const Vec& rho, const Vec& u) -> Vec {
        return model.A()(rho) * x + model.B()(rho) * u;
    };

    Mat out(steps, model.n_y());
    Vec x = Vec::Zero(n);
    for (Index k = 0; k < steps; ++k)
    {
        const Vec rho0 = rho_traj.samples.row(k).transpose();
        const Vec u0   = u_traj.samples.row(k).transpose();
        out.row(k) = (model.C()(rho0) * x + model.D()(rho0) * u0).transpose();
        if (k + 1 == steps)
            break;
        const Vec rho_h = rho_at(k, 0.5), u_h = u_at(k, 0.5);
        const Vec rho1 = rho_traj.samples.row(k + 1).transpose();
        const Vec u1   = u_traj.samples.row(k + 1).transpose();
        const Vec k1 = f(x, rho0, u0);
        const Vec k2 = f(x + 0.5 * dt * k1, rho_h, u_h);
        const Vec k3 = f(x + 0.5 * dt * k2, rho_h, u_h);
        const Vec k4 = f(x + dt * k3, rho1, u1);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return Trajectory(dt, std::move(out));
}

//------------------------------------------------------------------------------
// Grid evaluation
//------------------------------------------------------------------------------

struct GridHinf
{
    double gamma = 0.0;
    Vec active_rho;
    double active_freq = 0.0;
    std::size_t active_index = 0;
};

///
/// Worst frozen H-infinity norm over a grid of scheduling values. Grid points
/// are evaluated concurrently; ties go to the first index.
///
inline GridHinf grid_worst_hinf(const LpvModel& err, const std::vector<Vec>& grid,
                                double rel_tol = 1e-6)
{
    require(!grid.empty(), ErrorKind::invalid_argument, "grid_worst_hinf: empty grid");
    for (const Vec& rho : grid)
        require(err.box().contains(rho), ErrorKind::out_of_range,
                "grid_worst_hinf: grid point outside the box");
    std::vector<HinfNorm> norms(grid.size());
    std::vector<double> abscissa(grid.size());
    parallel_for(static_cast<Index>(grid.size()), [&](Index i) {
        const LtiStateSpace sys = freeze(err, grid[static_cast<std::size_t>(i)]);
        abscissa[static_cast<std::size_t>(i)] = spectral_abscissa(sys.A);
        if (abscissa[static_cast<std::size_t>(i)] < 0.0)
            norms[static_cast<std::size_t>(i)] = hinf_norm(sys, rel_tol);
    });
    GridHinf out;
    out.gamma = -1.0;
    for (std::size_t i = 0; i < grid.size(); ++i)
    {
        if (!(abscissa[i] < 0.0))
        {
            std::ostringstream msg;
            msg << "grid_worst_hinf: unstable at rho = [" << grid[i].transpose()
                << "] (spectral abscissa " << abscissa[i] << ")";
            fail(ErrorKind::not_stable, msg.str());
        }
        if (norms[i].gamma > out.gamma)
        {
            out.gamma        = norms[i].gamma;
            out.active_rho   = grid[i];
            out.active_freq  = norms[i].peak_frequency;
            out.active_index = i;
        }
    }
    return out;
}

} // namespace lpvred

#endif // LPVRED_ANALYSIS_HPP
