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

#ifndef LPVRED_CORE_HPP
#define LPVRED_CORE_HPP

#include <algorithm>
#include <atomic>
#include <complex>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace lpvred
{

using Mat  = Eigen::MatrixXd;
using Vec  = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using Complex = std::complex<double>;
using Index   = Eigen::Index;

enum class ErrorKind
{
    invalid_argument, ///< bad user input or violated precondition
    dimension,        ///< inconsistent matrix dimensions
    out_of_range,     ///< scheduling value outside its box
    well_posedness,   ///< singular LFT or algebraic loop
    unsupported,      ///< structure outside the supported (affine) class
    not_stable,       ///< a Hurwitz precondition failed
    infeasible,       ///< an LMI problem has no strictly feasible point
    numerical         ///< an iterative routine failed to converge
};

inline const char* to_string(ErrorKind kind)
{
    switch (kind)
    {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::out_of_range: return "out_of_range";
    case ErrorKind::well_posedness: return "well_posedness";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::not_stable: return "not_stable";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::numerical: return "numerical";
    }
    return "unknown";
}

class Error : public std::runtime_error
{
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), m_kind(kind)
    {
    }

    ErrorKind kind() const noexcept { return m_kind; }

    /// True for failures caused by the caller's input rather than by the
    /// numerics (the CLI maps these to the usage exit code).
    bool is_usage() const noexcept
    {
        return m_kind == ErrorKind::invalid_argument ||
               m_kind == ErrorKind::dimension ||
               m_kind == ErrorKind::out_of_range;
    }

private:
    ErrorKind m_kind;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what)
{
    throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what)
{
    if (!cond)
        fail(kind, what);
}

//------------------------------------------------------------------------------
// Warnings
//------------------------------------------------------------------------------

using WarningHandler = std::function<void(const std::string&)>;

namespace detail
{
inline WarningHandler& warning_handler()
{
    static WarningHandler handler = [](const std::string& msg) {
        std::cerr << "lpvred: warning: " << msg << '\n';
    };
    return handler;
}
inline std::mutex& warning_mutex()
{
    static std::mutex m;
    return m;
}
} // namespace detail

/// Replaces the process-wide warning sink. Pass an empty function to silence.
inline void set_warning_handler(WarningHandler handler)
{
    std::lock_guard<std::mutex> lock(detail::warning_mutex());
    detail::warning_handler() = std::move(handler);
}

inline void warn(const std::string& msg)
{
    std::lock_guard<std::mutex> lock(detail::warning_mutex());
    if (detail::warning_handler())
        detail::warning_handler()(msg);
}

//------------------------------------------------------------------------------
// Threading
//------------------------------------------------------------------------------

namespace detail
{
inline std::atomic<int>& thread_override()
{
    static std::atomic<int> n{-1};
    return n;
}
} // namespace detail

/// Caps worker threads for all library-internal loops. 0 means one thread per
/// hardware core; a negative value restores the LPVRED_THREADS default.
inline void set_thread_count(int n) { detail::thread_override() = n; }

inline int thread_count()
{
    int n = detail::thread_override();
    if (n < 0)
    {
        n = 0;
        if (const char* env = std::getenv("LPVRED_THREADS"))
            n = std::max(0, std::atoi(env));
    }
    if (n == 0)
        n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    return n;
}

/// Runs fn(i) for i in [0, count). Each index is processed exactly once and
/// results must be written to index-owned storage; callers reduce afterwards
/// in index order so outcomes never depend on the thread count.
template <typename Fn>
void parallel_for(Index count, Fn&& fn)
{
    const int workers = static_cast<int>(
        std::min<Index>(count, static_cast<Index>(thread_count())));
    if (workers <= 1)
    {
        for (Index i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::atomic<Index> next{0};
    std::exception_ptr first_error;
    Index first_index = count;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (Index i = next++; i < count; i = next++)
        {
            try
            {
                fn(i);
            }
            catch (...)
            {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (i < first_index)
                {
                    first_index = i;
                    first_error = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (int w = 1; w < workers; ++w)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
    if (first_error)
        std::rethrow_exception(first_error);
}

//------------------------------------------------------------------------------
// Small numeric helpers
//------------------------------------------------------------------------------

inline double sigma_max(const Mat& m)
{
    if (m.size() == 0)
        return 0.0;
    Eigen::JacobiSVD<Mat> svd(m);
    return svd.singularValues()(0);
}

inline double sigma_max(const CMat& m)
{
    if (m.size() == 0)
        return 0.0;
    Eigen::JacobiSVD<CMat> svd(m);
    return svd.singularValues()(0);
}

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline Mat block_diag(const Mat& a, const Mat& b)
{
    Mat out = Mat::Zero(a.rows() + b.rows(), a.cols() + b.cols());
    out.topLeftCorner(a.rows(), a.cols()) = a;
    out.bottomRightCorner(b.rows(), b.cols()) = b;
    return out;
}

inline Mat vstack(const Mat& a, const Mat& b)
{
    if (a.rows() == 0 && a.cols() == 0)
        return b;
    if (b.rows() == 0 && b.cols() == 0)
        return a;
    require(a.cols() == b.cols(), ErrorKind::dimension, "vstack: column mismatch");
    const Index cols = a.cols();
    Mat out(a.rows() + b.rows(), cols);
    if (a.rows() > 0)
        out.topRows(a.rows()) = a;
    if (b.rows() > 0)
        out.bottomRows(b.rows()) = b;
    return out;
}

inline Mat hstack(const Mat& a, const Mat& b)
{
    if (a.rows() == 0 && a.cols() == 0)
        return b;
    if (b.rows() == 0 && b.cols() == 0)
        return a;
    require(a.rows() == b.rows(), ErrorKind::dimension, "hstack: row mismatch");
    const Index rows = a.rows();
    Mat out(rows, a.cols() + b.cols());
    if (a.cols() > 0)
        out.leftCols(a.cols()) = a;
    if (b.cols() > 0)
        out.rightCols(b.cols()) = b;
    return out;
}

inline std::string shape(const Mat& m)
{
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

} // namespace lpvred

#endif // LPVRED_CORE_HPP
