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
/// \file model.hpp
///
/// Affine parameter-varying state-space models, their frozen (LTI) and LFT
/// forms, and the interconnections used to turn model reduction into a
/// fixed-structure synthesis problem.
///
#ifndef LPVRED_MODEL_HPP
#define LPVRED_MODEL_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <lpvred/core.hpp>

namespace lpvred
{

//------------------------------------------------------------------------------
// ParameterBox
//------------------------------------------------------------------------------

struct Interval
{
    double lo = -1.0;
    double hi = 1.0;

    double center() const { return 0.5 * (lo + hi); }
    double half_width() const { return 0.5 * (hi - lo); }
    bool operator==(const Interval&) const = default;
};

///
/// Closed box P = [lo_1,hi_1] x ... x [lo_n,hi_n] of admissible scheduling
/// values. An empty box (n_rho = 0) describes an LTI model.
///
class ParameterBox
{
public:
    ParameterBox() = default;

    explicit ParameterBox(std::vector<Interval> bounds) : m_bounds(std::move(bounds))
    {
        for (std::size_t i = 0; i < m_bounds.size(); ++i)
        {
            const auto& b = m_bounds[i];
            require(std::isfinite(b.lo) && std::isfinite(b.hi) && b.lo <= b.hi,
                    ErrorKind::invalid_argument,
                    "ParameterBox: invalid interval for parameter " + std::to_string(i));
        }
    }

    static ParameterBox unit(int n_rho)
    {
        return ParameterBox(std::vector<Interval>(static_cast<std::size_t>(n_rho), Interval{}));
    }

    int size() const { return static_cast<int>(m_bounds.size()); }
    const std::vector<Interval>& bounds() const { return m_bounds; }
    const Interval& operator[](int i) const { return m_bounds[static_cast<std::size_t>(i)]; }

    bool contains(const Vec& rho) const
    {
        if (rho.size() != size())
            return false;
        for (int i = 0; i < size(); ++i)
            if (!(rho(i) >= m_bounds[i].lo && rho(i) <= m_bounds[i].hi))
                return false;
        return true;
    }

    Vec center() const
    {
        Vec c(size());
        for (int i = 0; i < size(); ++i)
            c(i) = m_bounds[i].center();
        return c;
    }

    /// Affine map of the box onto [-1, 1]^n_rho. Degenerate intervals map to 0.
    Vec normalize(const Vec& rho) const
    {
        require(rho.size() == size(), ErrorKind::dimension, "normalize: rho length mismatch");
        Vec out(size());
        for (int i = 0; i < size(); ++i)
        {
            const double h = m_bounds[i].half_width();
            out(i) = h > 0.0 ? (rho(i) - m_bounds[i].center()) / h : 0.0;
        }
        return out;
    }

    Vec denormalize(const Vec& delta) const
    {
        require(delta.size() == size(), ErrorKind::dimension, "denormalize: length mismatch");
        Vec out(size());
        for (int i = 0; i < size(); ++i)
            out(i) = m_bounds[i].center() + m_bounds[i].half_width() * delta(i);
        return out;
    }

    /// All 2^n_rho corners, first parameter varying fastest.
    std::vector<Vec> vertices() const
    {
        require(size() <= 12, ErrorKind::unsupported,
                "vertex enumeration limited to n_rho <= 12");
        const std::size_t count = std::size_t{1} << size();
        std::vector<Vec> out;
        out.reserve(count);
        for (std::size_t k = 0; k < count; ++k)
        {
            Vec v(size());
            for (int i = 0; i < size(); ++i)
                v(i) = (k >> i) & 1u ? m_bounds[i].hi : m_bounds[i].lo;
            out.push_back(std::move(v));
        }
        return out;
    }

    /// Tensor grid with `points` uniformly spaced values per parameter, first
    /// parameter varying fastest. An LTI box yields one empty vector.
    std::vector<Vec> grid(int points = 5) const
    {
        require(points >= 1, ErrorKind::invalid_argument, "grid: points must be >= 1");
        std::size_t count = 1;
        for (int i = 0; i < size(); ++i)
            count *= static_cast<std::size_t>(points);
        std::vector<Vec> out;
        out.reserve(count);
        for (std::size_t k = 0; k < count; ++k)
        {
            Vec v(size());
            std::size_t rest = k;
            for (int i = 0; i < size(); ++i)
            {
                const auto j = static_cast<int>(rest % static_cast<std::size_t>(points));
                rest /= static_cast<std::size_t>(points);
                const auto& b = m_bounds[i];
                v(i) = points == 1 ? b.center()
                                   : b.lo + (b.hi - b.lo) * j / static_cast<double>(points - 1);
            }
            out.push_back(std::move(v));
        }
        return out;
    }

    bool operator==(const ParameterBox&) const = default;

private:
    std::vector<Interval> m_bounds;
};

//------------------------------------------------------------------------------
// AffineMatrix
//------------------------------------------------------------------------------

///
/// M(rho) = M_0 + sum_i rho_i M_i. Terms are indexed 0..n_rho with term 0 the
/// constant part.
///
class AffineMatrix
{
public:
    AffineMatrix() : m_terms(1, Mat(0, 0)) {}

    explicit AffineMatrix(std::vector<Mat> terms) : m_terms(std::move(terms))
    {
        require(!m_terms.empty(), ErrorKind::invalid_argument,
                "AffineMatrix: at least the constant term is required");
        for (const auto& t : m_terms)
            require(t.rows() == rows() && t.cols() == cols(), ErrorKind::dimension,
                    "AffineMatrix: coefficient shape " + shape(t) + " differs from " +
                        shape(m_terms[0]));
    }

    AffineMatrix(Mat constant, std::vector<Mat> coeffs)
        : AffineMatrix([&] {
              std::vector<Mat> t;
              t.reserve(coeffs.size() + 1);
              t.push_back(std::move(constant));
              for (auto& c : coeffs)
                  t.push_back(std::move(c));
              return t;
          }())
    {
    }

    static AffineMatrix zero(Index rows, Index cols, int n_rho)
    {
        return AffineMatrix(std::vector<Mat>(static_cast<std::size_t>(n_rho) + 1,
                                             Mat::Zero(rows, cols)));
    }

    static AffineMatrix constant(const Mat& m, int n_rho)
    {
        std::vector<Mat> t(static_cast<std::size_t>(n_rho) + 1, Mat::Zero(m.rows(), m.cols()));
        t[0] = m;
        return AffineMatrix(std::move(t));
    }

    Index rows() const { return m_terms[0].rows(); }
    Index cols() const { return m_terms[0].cols(); }
    int n_rho() const { return static_cast<int>(m_terms.size()) - 1; }

    const Mat& term(int k) const { return m_terms[static_cast<std::size_t>(k)]; }
    const Mat& constant() const { return m_terms[0]; }
    const Mat& coeff(int i) const { return m_terms[static_cast<std::size_t>(i) + 1]; }
    const std::vector<Mat>& terms() const { return m_terms; }

    Mat operator()(const Vec& rho) const
    {
        require(rho.size() == n_rho(), ErrorKind::dimension,
                "AffineMatrix: rho has length " + std::to_string(rho.size()) + ", expected " +
                    std::to_string(n_rho()));
        Mat out = m_terms[0];
        for (int i = 0; i < n_rho(); ++i)
            if (rho(i) != 0.0)
                out.noalias() += rho(i) * m_terms[static_cast<std::size_t>(i) + 1];
        return out;
    }

    bool is_constant() const
    {
        for (int i = 0; i < n_rho(); ++i)
            if (!coeff(i).isZero(0.0))
                return false;
        return true;
    }

    AffineMatrix transposed() const
    {
        std::vector<Mat> t;
        for (const auto& m : m_terms)
            t.push_back(m.transpose());
        return AffineMatrix(std::move(t));
    }

    /// Applies f to every term (f must be linear for the result to be meaningful).
    template <typename F>
    AffineMatrix map(F&& f) const
    {
        std::vector<Mat> t;
        t.reserve(m_terms.size());
        for (const auto& m : m_terms)
            t.push_back(f(m));
        return AffineMatrix(std::move(t));
    }

    friend AffineMatrix operator+(const AffineMatrix& a, const AffineMatrix& b)
    {
        check_compatible(a, b);
        std::vector<Mat> t;
        for (int k = 0; k <= a.n_rho(); ++k)
            t.push_back(a.term(k) + b.term(k));
        return AffineMatrix(std::move(t));
    }

    friend AffineMatrix operator-(const AffineMatrix& a, const AffineMatrix& b)
    {
        check_compatible(a, b);
        std::vector<Mat> t;
        for (int k = 0; k <= a.n_rho(); ++k)
            t.push_back(a.term(k) - b.term(k));
        return AffineMatrix(std::move(t));
    }

    friend AffineMatrix operator-(const AffineMatrix& a)
    {
        return a.map([](const Mat& m) { return Mat(-m); });
    }

    friend AffineMatrix operator*(const Mat& m, const AffineMatrix& a)
    {
        return a.map([&](const Mat& t) { return Mat(m * t); });
    }

    friend AffineMatrix operator*(const AffineMatrix& a, const Mat& m)
    {
        return a.map([&](const Mat& t) { return Mat(t * m); });
    }

    /// Product of two affine matrices. Rejects products whose second-order
    /// terms rho_i rho_j P_i Q_j do not vanish, since the result would leave
    /// the affine class.
    friend AffineMatrix operator*(const AffineMatrix& p, const AffineMatrix& q)
    {
        require(p.n_rho() == q.n_rho(), ErrorKind::dimension, "AffineMatrix: n_rho mismatch");
        require(p.cols() == q.rows(), ErrorKind::dimension, "AffineMatrix: inner dimension mismatch");
        for (int i = 1; i <= p.n_rho(); ++i)
        {
            if (p.term(i).isZero(0.0))
                continue;
            for (int j = 1; j <= q.n_rho(); ++j)
                if (!q.term(j).isZero(0.0) && !(p.term(i) * q.term(j)).isZero(0.0))
                    fail(ErrorKind::unsupported,
                         "product of parameter-dependent blocks is not affine in rho");
        }
        std::vector<Mat> t;
        t.push_back(p.term(0) * q.term(0));
        for (int i = 1; i <= p.n_rho(); ++i)
            t.push_back(p.term(i) * q.term(0) + p.term(0) * q.term(i));
        return AffineMatrix(std::move(t));
    }

    bool operator==(const AffineMatrix& other) const
    {
        if (n_rho() != other.n_rho() || rows() != other.rows() || cols() != other.cols())
            return false;
        for (int k = 0; k <= n_rho(); ++k)
            if (term(k) != other.term(k))
                return false;
        return true;
    }

private:
    static void check_compatible(const AffineMatrix& a, const AffineMatrix& b)
    {
        require(a.n_rho() == b.n_rho() && a.rows() == b.rows() && a.cols() == b.cols(),
                ErrorKind::dimension, "AffineMatrix: incompatible operands");
    }

    std::vector<Mat> m_terms;
};

inline AffineMatrix block_diag(const AffineMatrix& a, const AffineMatrix& b)
{
    require(a.n_rho() == b.n_rho(), ErrorKind::dimension, "block_diag: n_rho mismatch");
    std::vector<Mat> t;
    for (int k = 0; k <= a.n_rho(); ++k)
        t.push_back(block_diag(a.term(k), b.term(k)));
    return AffineMatrix(std::move(t));
}

inline AffineMatrix vstack(const AffineMatrix& a, const AffineMatrix& b)
{
    require(a.n_rho() == b.n_rho(), ErrorKind::dimension, "vstack: n_rho mismatch");
    std::vector<Mat> t;
    for (int k = 0; k <= a.n_rho(); ++k)
        t.push_back(vstack(a.term(k), b.term(k)));
    return AffineMatrix(std::move(t));
}

inline AffineMatrix hstack(const AffineMatrix& a, const AffineMatrix& b)
{
    require(a.n_rho() == b.n_rho(), ErrorKind::dimension, "hstack: n_rho mismatch");
    std::vector<Mat> t;
    for (int k = 0; k <= a.n_rho(); ++k)
        t.push_back(hstack(a.term(k), b.term(k)));
    return AffineMatrix(std::move(t));
}

/// Rows [r0, r0+nr) and columns [c0, c0+nc) of every term.
inline AffineMatrix sub_block(const AffineMatrix& a, Index r0, Index c0, Index nr, Index nc)
{
    return a.map([&](const Mat& m) { return Mat(m.block(r0, c0, nr, nc)); });
}

//------------------------------------------------------------------------------
// LtiStateSpace
//------------------------------------------------------------------------------

struct LtiStateSpace
{
    Mat A, B, C, D;

    LtiStateSpace() = default;

    LtiStateSpace(Mat a, Mat b, Mat c, Mat d)
        : A(std::move(a)), B(std::move(b)), C(std::move(c)), D(std::move(d))
    {
        validate();
    }

    /// Static gain with no states.
    static LtiStateSpace gain(const Mat& d)
    {
        return LtiStateSpace(Mat(0, 0), Mat(0, d.cols()), Mat(d.rows(), 0), d);
    }

    Index n_x() const { return A.rows(); }
    Index n_u() const { return B.cols(); }
    Index n_y() const { return C.rows(); }

    void validate() const
    {
        require(A.rows() == A.cols(), ErrorKind::dimension, "A must be square, got " + shape(A));
        require(B.rows() == A.rows(), ErrorKind::dimension, "B rows must equal n_x");
        require(C.cols() == A.rows(), ErrorKind::dimension, "C cols must equal n_x");
        require(D.rows() == C.rows() && D.cols() == B.cols(), ErrorKind::dimension,
                "D must be n_y x n_u, got " + shape(D));
    }

    /// Transfer matrix at the complex frequency s.
    CMat eval(Complex s) const
    {
        CMat out = D.cast<Complex>();
        if (n_x() == 0)
            return out;
        CMat sia = -A.cast<Complex>();
        sia.diagonal().array() += s;
        Eigen::PartialPivLU<CMat> lu(sia);
        out.noalias() += C.cast<Complex>() * lu.solve(B.cast<Complex>());
        return out;
    }

    CMat freqresp(double omega) const { return eval(Complex(0.0, omega)); }
};

//------------------------------------------------------------------------------
// LpvModel
//------------------------------------------------------------------------------

///
/// LPV system xdot = A(rho) x + B(rho) u, y = C(rho) x + D(rho) u with every
/// matrix affine in rho over the box P.
///
class LpvModel
{
public:
    LpvModel() = default;

    LpvModel(AffineMatrix a, AffineMatrix b, AffineMatrix c, AffineMatrix d, ParameterBox box)
        : m_a(std::move(a)), m_b(std::move(b)), m_c(std::move(c)), m_d(std::move(d)),
          m_box(std::move(box))
    {
        const int n_rho = m_box.size();
        require(m_a.n_rho() == n_rho && m_b.n_rho() == n_rho && m_c.n_rho() == n_rho &&
                    m_d.n_rho() == n_rho,
                ErrorKind::dimension, "LpvModel: coefficient count differs from n_rho");
        require(m_a.rows() == m_a.cols(), ErrorKind::dimension, "LpvModel: A must be square");
        require(m_b.rows() == m_a.rows(), ErrorKind::dimension, "LpvModel: B rows must equal n_x");
        require(m_c.cols() == m_a.rows(), ErrorKind::dimension, "LpvModel: C cols must equal n_x");
        require(m_d.rows() == m_c.rows() && m_d.cols() == m_b.cols(), ErrorKind::dimension,
                "LpvModel: D must be n_y x n_u");
    }

    /// Wraps an LTI system as a model with no scheduling parameters, or with
    /// `box` and zero parameter coefficients.
    static LpvModel from_lti(const LtiStateSpace& sys, const ParameterBox& box = {})
    {
        const int n = box.size();
        return LpvModel(AffineMatrix::constant(sys.A, n), AffineMatrix::constant(sys.B, n),
                        AffineMatrix::constant(sys.C, n), AffineMatrix::constant(sys.D, n), box);
    }

    const AffineMatrix& A() const { return m_a; }
    const AffineMatrix& B() const { return m_b; }
    const AffineMatrix& C() const { return m_c; }
    const AffineMatrix& D() const { return m_d; }
    const ParameterBox& box() const { return m_box; }

    Index n_x() const { return m_a.rows(); }
    Index n_u() const { return m_b.cols(); }
    Index n_y() const { return m_c.rows(); }
    int n_rho() const { return m_box.size(); }

    bool is_lti() const
    {
        return m_a.is_constant() && m_b.is_constant() && m_c.is_constant() && m_d.is_constant();
    }

    bool operator==(const LpvModel&) const = default;

private:
    AffineMatrix m_a, m_b, m_c, m_d;
    ParameterBox m_box;
};

/// Frozen evaluation without the box check, for deliberate extrapolation.
inline LtiStateSpace freeze_unchecked(const LpvModel& model, const Vec& rho)
{
    return LtiStateSpace(model.A()(rho), model.B()(rho), model.C()(rho), model.D()(rho));
}

inline LtiStateSpace freeze(const LpvModel& model, const Vec& rho)
{
    require(rho.size() == model.n_rho(), ErrorKind::dimension,
            "freeze: rho has length " + std::to_string(rho.size()) + ", model has n_rho = " +
                std::to_string(model.n_rho()));
    if (!model.box().contains(rho))
        fail(ErrorKind::out_of_range, "freeze: rho outside the parameter box");
    return freeze_unchecked(model, rho);
}

//------------------------------------------------------------------------------
// LFT form
//------------------------------------------------------------------------------

struct DeltaBlock
{
    int parameter = 0;  ///< index into rho
    int repetitions = 0;
    bool operator==(const DeltaBlock&) const = default;
};

///
/// Upper-LFT realization
///
///   [xdot; v; y] = [A Bw Bu; Cv Dvw Dvu; Cy Dyw Dyu] [x; w; u],  w = Delta v,
///
/// with Delta = diag(delta_i I_{r_i}) and delta the scheduling vector mapped
/// onto the unit box. The source box is kept so evaluation can be related
/// back to the original coordinates.
///
struct LftModel
{
    Mat A, Bw, Bu, Cv, Dvw, Dvu, Cy, Dyw, Dyu;
    std::vector<DeltaBlock> delta_structure;
    ParameterBox box;

    Index q() const { return Dvw.rows(); }

    Mat delta(const Vec& normalized) const
    {
        Mat out = Mat::Zero(q(), q());
        Index k = 0;
        for (const auto& blk : delta_structure)
            for (int r = 0; r < blk.repetitions; ++r, ++k)
                out(k, k) = normalized(blk.parameter);
        return out;
    }
};

namespace detail
{
constexpr double lft_rank_threshold = 1e-10;
}

/// Affine model to LFT form. Each parameter's stacked coefficient
/// [A_i B_i; C_i D_i] (scaled by the box half-width) is factored by SVD into
/// L_i R_i of rank r_i, giving r_i repetitions of delta_i and Dvw = 0.
inline LftModel to_lft(const LpvModel& model)
{
    const Index nx = model.n_x(), nu = model.n_u(), ny = model.n_y();
    const ParameterBox& box = model.box();
    const Vec c = box.center();

    LftModel lft;
    lft.box = box;
    lft.A   = model.A()(c);
    lft.Bu  = model.B()(c);
    lft.Cy  = model.C()(c);
    lft.Dyu = model.D()(c);

    std::vector<Mat> lefts, rights;
    for (int i = 0; i < model.n_rho(); ++i)
    {
        Mat s(nx + ny, nx + nu);
        s << model.A().coeff(i), model.B().coeff(i), model.C().coeff(i), model.D().coeff(i);
        s *= box[i].half_width();
        if (s.size() == 0)
            continue;
        Eigen::JacobiSVD<Mat> svd(s, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Vec& sv = svd.singularValues();
        if (sv.size() == 0 || sv(0) == 0.0)
            continue;
        Index r = 0;
        while (r < sv.size() && sv(r) > detail::lft_rank_threshold * sv(0))
            ++r;
        const Vec root = sv.head(r).cwiseSqrt();
        lefts.push_back(svd.matrixU().leftCols(r) * root.asDiagonal());
        rights.push_back(root.asDiagonal() * svd.matrixV().leftCols(r).transpose());
        lft.delta_structure.push_back({i, static_cast<int>(r)});
    }

    Index q = 0;
    for (const auto& b : lft.delta_structure)
        q += b.repetitions;

    Mat left(nx + ny, q), right(q, nx + nu);
    Index k = 0;
    for (std::size_t j = 0; j < lefts.size(); ++j)
    {
        left.middleCols(k, lefts[j].cols())  = lefts[j];
        right.middleRows(k, rights[j].rows()) = rights[j];
        k += lefts[j].cols();
    }
    lft.Bw  = left.topRows(nx);
    lft.Dyw = left.bottomRows(ny);
    lft.Cv  = right.leftCols(nx);
    lft.Dvu = right.rightCols(nu);
    lft.Dvw = Mat::Zero(q, q);
    return lft;
}

/// Closes the Delta loop at the normalized scheduling vector.
inline LtiStateSpace eval_lft(const LftModel& lft, const Vec& normalized)
{
    require(normalized.size() == lft.box.size(), ErrorKind::dimension,
            "eval_lft: rho length mismatch");
    for (Index i = 0; i < normalized.size(); ++i)
        require(std::abs(normalized(i)) <= 1.0 + 1e-12, ErrorKind::out_of_range,
                "eval_lft: normalized rho outside the unit box");
    if (lft.q() == 0)
        return LtiStateSpace(lft.A, lft.Bu, lft.Cy, lft.Dyu);

    const Mat delta = lft.delta(normalized);
    const Mat loop  = Mat::Identity(lft.q(), lft.q()) - lft.Dvw * delta;
    Eigen::FullPivLU<Mat> lu(loop);
    if (!lu.isInvertible() || lu.rcond() < 1e-14)
        fail(ErrorKind::well_posedness, "eval_lft: I - Dvw*Delta is singular");
    // w = Delta (I - Dvw Delta)^{-1} (Cv x + Dvu u)
    const Mat gain = delta * lu.solve(Mat::Identity(lft.q(), lft.q()));
    return LtiStateSpace(lft.A + lft.Bw * gain * lft.Cv, lft.Bu + lft.Bw * gain * lft.Dvu,
                         lft.Cy + lft.Dyw * gain * lft.Cv, lft.Dyu + lft.Dyw * gain * lft.Dvu);
}

//------------------------------------------------------------------------------
// Interconnections
//------------------------------------------------------------------------------

/// Error system G - G_red with stacked state [x; x_red].
inline LpvModel difference(const LpvModel& g, const LpvModel& g_red)
{
    require(g.n_u() == g_red.n_u() && g.n_y() == g_red.n_y(), ErrorKind::dimension,
            "difference: input/output dimensions differ");
    require(g.n_rho() == g_red.n_rho() && g.box() == g_red.box(), ErrorKind::dimension,
            "difference: parameter boxes differ");
    return LpvModel(block_diag(g.A(), g_red.A()), vstack(g.B(), g_red.B()),
                    hstack(g.C(), -g_red.C()), g.D() - g_red.D(), g.box());
}

///
/// Model with inputs [w; u] and outputs [z; y]; the last `n_ctrl` inputs are
/// driven by a controller and the last `n_meas` outputs are fed to it.
///
struct PlantModel
{
    LpvModel model;
    Index n_ctrl = 0;
    Index n_meas = 0;

    Index n_w() const { return model.n_u() - n_ctrl; }
    Index n_z() const { return model.n_y() - n_meas; }
};

/// G_gp = [[G, -I], [I, 0]] so that lower_lft(G_gp, K) = G - K.
inline PlantModel generalized_plant(const LpvModel& g)
{
    const Index nx = g.n_x(), nu = g.n_u(), ny = g.n_y();
    const int n_rho = g.n_rho();
    const auto zeros = [&](Index r, Index c) { return AffineMatrix::zero(r, c, n_rho); };
    const auto eye = [&](Index r) { return AffineMatrix::constant(Mat::Identity(r, r), n_rho); };

    const AffineMatrix b = hstack(g.B(), zeros(nx, ny));
    const AffineMatrix c = vstack(g.C(), zeros(nu, nx));
    const AffineMatrix d =
        vstack(hstack(g.D(), -eye(ny)), hstack(eye(nu), zeros(nu, ny)));
    return PlantModel{LpvModel(g.A(), b, c, d, g.box()), ny, nu};
}

namespace detail
{

struct PartitionedLti
{
    Mat A, B1, B2, C1, C2, D11, D12, D21, D22;
};

inline PartitionedLti partition(const LtiStateSpace& p, Index n_ctrl, Index n_meas)
{
    const Index nw = p.n_u() - n_ctrl, nz = p.n_y() - n_meas;
    return {p.A,
            p.B.leftCols(nw),
            p.B.rightCols(n_ctrl),
            p.C.topRows(nz),
            p.C.bottomRows(n_meas),
            p.D.topLeftCorner(nz, nw),
            p.D.topRightCorner(nz, n_ctrl),
            p.D.bottomLeftCorner(n_meas, nw),
            p.D.bottomRightCorner(n_meas, n_ctrl)};
}

} // namespace detail

/// Frozen lower LFT F_l(P, K) with closed-loop state [x; x_K].
inline LtiStateSpace lower_lft(const LtiStateSpace& plant, Index n_ctrl, Index n_meas,
                               const LtiStateSpace& k)
{
    require(n_ctrl <= plant.n_u() && n_meas <= plant.n_y(), ErrorKind::dimension,
            "lower_lft: channel counts exceed plant dimensions");
    require(k.n_u() == n_meas && k.n_y() == n_ctrl, ErrorKind::dimension,
            "lower_lft: controller must map " + std::to_string(n_meas) + " measurements to " +
                std::to_string(n_ctrl) + " controls");
    const auto p = detail::partition(plant, n_ctrl, n_meas);

    // u = C_K x_K + D_K y, y = C2 x + D21 w + D22 u
    const Mat loop = Mat::Identity(n_ctrl, n_ctrl) - k.D * p.D22;
    Eigen::FullPivLU<Mat> lu(loop);
    if (!lu.isInvertible() || lu.rcond() < 1e-13)
        fail(ErrorKind::well_posedness, "lower_lft: algebraic loop I - D_K D22 is singular");
    const Mat r  = lu.solve(Mat::Identity(n_ctrl, n_ctrl)); // (I - D_K D22)^{-1}
    const Mat ux = r * k.D * p.C2;                          // u in terms of x
    const Mat uk = r * k.C;                                 // ... of x_K
    const Mat uw = r * k.D * p.D21;                         // ... of w
    const Mat yx = p.C2 + p.D22 * ux;
    const Mat yk = p.D22 * uk;
    const Mat yw = p.D21 + p.D22 * uw;

    const Index nx = p.A.rows(), nk = k.n_x();
    Mat a(nx + nk, nx + nk), b(nx + nk, p.B1.cols()), c(p.C1.rows(), nx + nk);
    a << p.A + p.B2 * ux, p.B2 * uk, k.B * yx, k.A + k.B * yk;
    b << p.B1 + p.B2 * uw, k.B * yw;
    c << p.C1 + p.D12 * ux, p.D12 * uk;
    return LtiStateSpace(std::move(a), std::move(b), std::move(c), p.D11 + p.D12 * uw);
}

inline LtiStateSpace lower_lft(const LtiStateSpace& plant, Index n_ctrl, Index n_meas,
                               const Mat& static_gain)
{
    return lower_lft(plant, n_ctrl, n_meas, LtiStateSpace::gain(static_gain));
}

///
/// LPV lower LFT. Products of parameter-dependent blocks are formed term by
/// term; the algebraic loop I - D_K D22 must not depend on rho and every
/// product must stay affine, otherwise an unsupported error is raised.
///
inline LpvModel lower_lft(const PlantModel& plant, const LpvModel& k)
{
    const LpvModel& pm = plant.model;
    const Index n_ctrl = plant.n_ctrl, n_meas = plant.n_meas;
    const Index nw = plant.n_w(), nz = plant.n_z(), nx = pm.n_x();
    require(k.n_u() == n_meas && k.n_y() == n_ctrl, ErrorKind::dimension,
            "lower_lft: controller dimensions do not match plant channels");
    require(k.n_rho() == pm.n_rho(), ErrorKind::dimension, "lower_lft: n_rho mismatch");

    const AffineMatrix b1  = sub_block(pm.B(), 0, 0, nx, nw);
    const AffineMatrix b2  = sub_block(pm.B(), 0, nw, nx, n_ctrl);
    const AffineMatrix c1  = sub_block(pm.C(), 0, 0, nz, nx);
    const AffineMatrix c2  = sub_block(pm.C(), nz, 0, n_meas, nx);
    const AffineMatrix d11 = sub_block(pm.D(), 0, 0, nz, nw);
    const AffineMatrix d12 = sub_block(pm.D(), 0, nw, nz, n_ctrl);
    const AffineMatrix d21 = sub_block(pm.D(), nz, 0, n_meas, nw);
    const AffineMatrix d22 = sub_block(pm.D(), nz, nw, n_meas, n_ctrl);

    const AffineMatrix kd_d22 = k.D() * d22;
    if (!kd_d22.is_constant())
        fail(ErrorKind::unsupported, "lower_lft: parameter-dependent algebraic loop D_K D22");
    const Mat loop = Mat::Identity(n_ctrl, n_ctrl) - kd_d22.constant();
    Eigen::FullPivLU<Mat> lu(loop);
    if (!lu.isInvertible() || lu.rcond() < 1e-13)
        fail(ErrorKind::well_posedness, "lower_lft: algebraic loop I - D_K D22 is singular");
    const Mat r = lu.solve(Mat::Identity(n_ctrl, n_ctrl));

    const AffineMatrix ux = r * (k.D() * c2);
    const AffineMatrix uk = r * k.C();
    const AffineMatrix uw = r * (k.D() * d21);
    const AffineMatrix yx = c2 + d22 * ux;
    const AffineMatrix yk = d22 * uk;
    const AffineMatrix yw = d21 + d22 * uw;

    const AffineMatrix a = vstack(hstack(pm.A() + b2 * ux, b2 * uk),
                                  hstack(k.B() * yx, k.A() + k.B() * yk));
    const AffineMatrix b = vstack(b1 + b2 * uw, k.B() * yw);
    const AffineMatrix c = hstack(c1 + d12 * ux, d12 * uk);
    return LpvModel(a, b, c, d11 + d12 * uw, pm.box());
}

} // namespace lpvred

#endif // LPVRED_MODEL_HPP
