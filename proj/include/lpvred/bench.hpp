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

#ifndef LPVRED_BENCH_HPP
#define LPVRED_BENCH_HPP

#include <string>

#include <lpvred/model.hpp>

namespace lpvred
{

/// Chain of N masses with scheduled springs k_i = k0 + rho_p(i) * k_rho.
struct MsdConfig
{
    int N       = 10;
    int n_rho   = 1;
    double m    = 1.0;  // kg
    double d    = 0.75; // N s/m
    double k0   = 0.5;  // N/m
    double k_rho = 0.3; // N/m

    void validate() const
    {
        require(N >= 1, ErrorKind::invalid_argument, "MsdConfig: N must be >= 1");
        require(n_rho >= 1 && n_rho <= N, ErrorKind::invalid_argument,
                "MsdConfig: n_rho must satisfy 1 <= n_rho <= N");
        require(m > 0.0 && d > 0.0 && k0 > 0.0, ErrorKind::invalid_argument,
                "MsdConfig: m, d and k0 must be positive");
        require(k_rho >= 0.0 && k0 > k_rho, ErrorKind::invalid_argument,
                "MsdConfig: need 0 <= k_rho < k0 so springs stay positive");
    }
};

/// Scheduling parameter (0-based) driving spring i (0-based): parameters are
/// tied as rho_i = rho_{i + n_rho}.
inline int msd_spring_parameter(int spring, int n_rho) { return spring % n_rho; }

///
/// Builds the chain
///
///   m x_i'' = -F_i - F_{i,i-1} - F_{i,i+1} (+ F_u on the last block),
///   F_i     = d x_i' + k_i x_i,
///   F_{i,j} = d (x_i' - x_j') + k_j (x_i - x_j),
///
/// with neighbor terms omitted at the ends of the chain. State is
/// [positions; velocities], the input is the force on block N and the output
/// is its displacement.
///
inline LpvModel build_msd(const MsdConfig& cfg)
{
    cfg.validate();
    const int n = cfg.N;
    const Index nx = 2 * n;

    // Stiffness matrix K(rho) = K0 + sum_p rho_p K_p with m x'' = -K x - Dm x'.
    std::vector<Mat> stiff(static_cast<std::size_t>(cfg.n_rho) + 1, Mat::Zero(n, n));
    const auto add_spring = [&](int row, int col, int spring, double sign) {
        stiff[0](row, col) += sign * cfg.k0;
        stiff[static_cast<std::size_t>(msd_spring_parameter(spring, cfg.n_rho)) + 1](row, col) +=
            sign * cfg.k_rho;
    };
    Mat damp = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i)
    {
        add_spring(i, i, i, 1.0);
        damp(i, i) += cfg.d;
        for (int j : {i - 1, i + 1})
        {
            if (j < 0 || j >= n)
                continue;
            add_spring(i, i, j, 1.0);
            add_spring(i, j, j, -1.0);
            damp(i, i) += cfg.d;
            damp(i, j) -= cfg.d;
        }
    }

    std::vector<Mat> a_terms;
    for (std::size_t k = 0; k < stiff.size(); ++k)
    {
        Mat a = Mat::Zero(nx, nx);
        a.bottomLeftCorner(n, n) = -stiff[k] / cfg.m;
        if (k == 0)
        {
            a.topRightCorner(n, n)     = Mat::Identity(n, n);
            a.bottomRightCorner(n, n) = -damp / cfg.m;
        }
        a_terms.push_back(std::move(a));
    }

    Mat b = Mat::Zero(nx, 1);
    b(nx - 1, 0) = 1.0 / cfg.m;
    Mat c = Mat::Zero(1, nx);
    c(0, n - 1) = 1.0;

    return LpvModel(AffineMatrix(std::move(a_terms)), AffineMatrix::constant(b, cfg.n_rho),
                    AffineMatrix::constant(c, cfg.n_rho),
                    AffineMatrix::constant(Mat::Zero(1, 1), cfg.n_rho),
                    ParameterBox::unit(cfg.n_rho));
}

} // namespace lpvred

#endif // LPVRED_BENCH_HPP
