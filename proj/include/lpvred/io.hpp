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
/// JSON and CSV serialization for models, structure masks and reports.
///
/// Model schema: {"n_rho", "bounds": [[lo, hi], ...], "A": {"const": [[..]],
/// "coeffs": [[[..]], ...]}, "B": .., "C": .., "D": ..}. Matrices are
/// row-major nested arrays. Doubles are written in shortest round-trip form,
/// so save followed by load reproduces every entry bit for bit.
///
#ifndef LPVRED_IO_HPP
#define LPVRED_IO_HPP

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <lpvred/analysis.hpp>
#include <lpvred/closedloop.hpp>
#include <lpvred/model.hpp>
#include <lpvred/reduction.hpp>

namespace lpvred::io
{

using json = nlohmann::json;

//------------------------------------------------------------------------------
// Matrices
//------------------------------------------------------------------------------

inline json to_json(const Mat& m)
{
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i)
    {
        json row = json::array();
        for (Index j = 0; j < m.cols(); ++j)
        {
            require(std::isfinite(m(i, j)), ErrorKind::invalid_argument,
                    "io: refusing to serialize a non-finite matrix entry");
            row.push_back(m(i, j));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline double number(const json& v, const std::string& what)
{
    require(v.is_number(), ErrorKind::invalid_argument, "io: " + what + " must be a number");
    return v.get<double>();
}

/// Reads a rows x cols matrix. Zero-row matrices are written as [] and take
/// their column count from the caller.
inline Mat matrix_from_json(const json& v, Index rows, Index cols, const std::string& what)
{
    require(v.is_array(), ErrorKind::invalid_argument, "io: " + what + " must be an array");
    require(static_cast<Index>(v.size()) == rows, ErrorKind::dimension,
            "io: " + what + " has " + std::to_string(v.size()) + " rows, expected " +
                std::to_string(rows));
    Mat m(rows, cols);
    for (Index i = 0; i < rows; ++i)
    {
        const json& row = v[static_cast<std::size_t>(i)];
        require(row.is_array() && static_cast<Index>(row.size()) == cols, ErrorKind::dimension,
                "io: " + what + " row " + std::to_string(i) + " must have " +
                    std::to_string(cols) + " entries");
        for (Index j = 0; j < cols; ++j)
            m(i, j) = number(row[static_cast<std::size_t>(j)], what);
    }
    return m;
}

inline Index row_count(const json& v, const std::string& what)
{
    require(v.is_array(), ErrorKind::invalid_argument, "io: " + what + " must be an array");
    return static_cast<Index>(v.size());
}

inline Index col_count(const json& v, const std::string& what)
{
    require(v.is_array() && !v.empty() && v[0].is_array(), ErrorKind::invalid_argument,
            "io: cannot infer the column count of " + what);
    return static_cast<Index>(v[0].size());
}

//------------------------------------------------------------------------------
// Models
//------------------------------------------------------------------------------

inline json to_json(const AffineMatrix& a)
{
    json coeffs = json::array();
    for (int i = 0; i < a.n_rho(); ++i)
        coeffs.push_back(to_json(a.coeff(i)));
    return {{"const", to_json(a.term(0))}, {"coeffs", std::move(coeffs)}};
}

inline AffineMatrix affine_from_json(const json& v, Index rows, Index cols, int n_rho,
                                     const std::string& name)
{
    require(v.is_object() && v.contains("const"), ErrorKind::invalid_argument,
            "io: " + name + " must be an object with a \"const\" entry");
    std::vector<Mat> terms{matrix_from_json(v["const"], rows, cols, name + ".const")};
    const json coeffs = v.value("coeffs", json::array());
    require(coeffs.is_array() && static_cast<int>(coeffs.size()) == n_rho, ErrorKind::dimension,
            "io: " + name + ".coeffs must hold n_rho = " + std::to_string(n_rho) + " matrices");
    for (int i = 0; i < n_rho; ++i)
        terms.push_back(matrix_from_json(coeffs[static_cast<std::size_t>(i)], rows, cols,
                                         name + ".coeffs[" + std::to_string(i) + "]"));
    return AffineMatrix(std::move(terms));
}

inline json to_json(const LpvModel& m)
{
    json bounds = json::array();
    for (const auto& b : m.box().bounds())
        bounds.push_back({b.lo, b.hi});
    return {{"n_rho", m.n_rho()}, {"bounds", std::move(bounds)}, {"A", to_json(m.A())},
            {"B", to_json(m.B())},  {"C", to_json(m.C())},         {"D", to_json(m.D())}};
}

inline LpvModel model_from_json(const json& v)
{
    require(v.is_object(), ErrorKind::invalid_argument, "io: model must be a JSON object");
    for (const char* key : {"n_rho", "bounds", "A", "B", "C", "D"})
        require(v.contains(key), ErrorKind::invalid_argument,
                std::string("io: model is missing \"") + key + "\"");
    require(v["n_rho"].is_number_integer() && v["n_rho"].get<int>() >= 0,
            ErrorKind::invalid_argument, "io: n_rho must be a non-negative integer");
    const int n_rho = v["n_rho"].get<int>();
    const json& bj = v["bounds"];
    require(bj.is_array() && static_cast<int>(bj.size()) == n_rho, ErrorKind::dimension,
            "io: bounds must hold n_rho intervals");
    std::vector<Interval> bounds;
    for (const json& b : bj)
    {
        require(b.is_array() && b.size() == 2, ErrorKind::invalid_argument,
                "io: each bound must be [lo, hi]");
        bounds.push_back({number(b[0], "bound"), number(b[1], "bound")});
    }
    for (const char* key : {"A", "B", "C", "D"})
        require(v[key].is_object() && v[key].contains("const"), ErrorKind::invalid_argument,
                std::string("io: ") + key + " must be an object with a \"const\" entry");
    const Index n = row_count(v["A"]["const"], "A.const");
    const Index ny = row_count(v["D"]["const"], "D.const");
    const Index nu = col_count(v["D"]["const"], "D.const");
    return LpvModel(affine_from_json(v["A"], n, n, n_rho, "A"),
                    affine_from_json(v["B"], n, nu, n_rho, "B"),
                    affine_from_json(v["C"], ny, n, n_rho, "C"),
                    affine_from_json(v["D"], ny, nu, n_rho, "D"), ParameterBox(std::move(bounds)));
}

/// LTI systems use the model schema with n_rho = 0.
inline LtiStateSpace lti_from_json(const json& v)
{
    const LpvModel m = model_from_json(v);
    require(m.n_rho() == 0, ErrorKind::invalid_argument, "io: expected an LTI model (n_rho = 0)");
    return freeze(m, Vec(0));
}

//------------------------------------------------------------------------------
// Files
//------------------------------------------------------------------------------

inline json read_json(const std::string& path)
{
    std::ifstream in(path);
    require(in.good(), ErrorKind::invalid_argument, "io: cannot open " + path);
    try
    {
        return json::parse(in);
    }
    catch (const json::exception& e)
    {
        fail(ErrorKind::invalid_argument, "io: " + path + " is not valid JSON: " + e.what());
    }
}

inline void write_text(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorKind::invalid_argument, "io: cannot write " + path);
    out << text;
    require(out.good(), ErrorKind::invalid_argument, "io: write failed for " + path);
}

inline void write_json(const std::string& path, const json& v)
{
    write_text(path, v.dump(2) + "\n");
}

inline LpvModel load_model(const std::string& path) { return model_from_json(read_json(path)); }

inline void save_model(const std::string& path, const LpvModel& m) { write_json(path, to_json(m)); }

//------------------------------------------------------------------------------
// Structure masks
//------------------------------------------------------------------------------

///
/// Custom mask file: {"n", "n_u", "n_y", "n_rho", "A": {"const": [[0|1..]],
/// "coeffs": [...]}, "B": .., "C": .., "D": ..} with 1 marking a free entry.
/// An optional "fixed" object in the model matrix layout supplies values for
/// pinned entries (zero otherwise). Omitted matrices stay fully free.
///
inline StructureMask mask_from_json(const json& v)
{
    require(v.is_object(), ErrorKind::invalid_argument, "io: mask must be a JSON object");
    for (const char* key : {"n", "n_u", "n_y", "n_rho"})
        require(v.contains(key) && v[key].is_number_integer(), ErrorKind::invalid_argument,
                std::string("io: mask needs an integer \"") + key + "\"");
    StructureMask m = StructureMask::full(v["n"].get<Index>(), v["n_u"].get<Index>(),
                                          v["n_y"].get<Index>(), v["n_rho"].get<int>());
    m.kind = MaskKind::custom;
    const char* names[4] = {"A", "B", "C", "D"};
    for (int which = 0; which < 4; ++which)
    {
        const auto [r, c] = m.shape(which);
        const auto w = static_cast<std::size_t>(which);
        if (v.contains(names[which]))
        {
            const AffineMatrix p = affine_from_json(v[names[which]], r, c, m.n_rho, names[which]);
            for (int k = 0; k <= m.n_rho; ++k)
            {
                const Mat& t = p.term(k);
                require(((t.array() == 0.0) || (t.array() == 1.0)).all(),
                        ErrorKind::invalid_argument,
                        std::string("io: mask ") + names[which] + " entries must be 0 or 1");
                m.free[w][static_cast<std::size_t>(k)] = t.array() == 1.0;
            }
        }
        if (v.contains("fixed") && v["fixed"].contains(names[which]))
        {
            const AffineMatrix f =
                affine_from_json(v["fixed"][names[which]], r, c, m.n_rho, names[which]);
            for (int k = 0; k <= m.n_rho; ++k)
                m.fixed[w][static_cast<std::size_t>(k)] = f.term(k);
        }
    }
    m.validate();
    return m;
}

inline StructureMask load_mask(const std::string& path) { return mask_from_json(read_json(path)); }

//------------------------------------------------------------------------------
// Reports
//------------------------------------------------------------------------------

inline json to_json(const Vec& v)
{
    json out = json::array();
    for (Index i = 0; i < v.size(); ++i)
        out.push_back(v(i));
    return out;
}

/// Infinite values (a peak at w -> inf) are written as the string "inf".
inline json finite_or_inf(double x)
{
    if (std::isinf(x))
        return x > 0 ? "inf" : "-inf";
    return x;
}

inline json to_json(const CertifyResult& c)
{
    return {{"certified_bound", c.certified_bound},
            {"grid_lower_bound", c.grid_lower_bound},
            {"margin", c.margin},
            {"bisection_steps", c.bisection_steps},
            {"certified_order", c.certified_order}};
}

inline json to_json(const ReductionReport& r)
{
    json out = {{"model", to_json(r.g_red)},
                {"order", r.g_red.n_x()},
                {"grid_error", r.grid_error},
                {"baseline_grid_error", r.baseline_grid_error},
                {"iterations", r.iterations},
                {"history", r.history},
                {"active_rho", to_json(r.active_rho)},
                {"active_freq", finite_or_inf(r.active_freq)},
                {"winning_start", r.winning_start},
                {"start_values", r.start_values},
                {"structure", r.mask_kind},
                {"initializer", r.initializer},
                {"gramian_objective", r.gramian_objective}};
    if (r.certificate)
        out.update(to_json(*r.certificate));
    return out;
}

inline json to_json(const ClosedLoopReport& r)
{
    json points = json::array();
    for (std::size_t i = 0; i < r.grid.size(); ++i)
        points.push_back({{"rho", to_json(r.grid[i])},
                          {"stable", static_cast<bool>(r.stable[i])},
                          {"abscissa", r.abscissa[i]},
                          {"steady_state_error", r.metrics[i].steady_state_error},
                          {"overshoot", r.metrics[i].overshoot},
                          {"settling_time", finite_or_inf(r.metrics[i].settling_time)}});
    json out = {{"stable_on_grid", r.stable_on_grid()},
                {"worst_steady_state_error", r.worst_steady_state_error()},
                {"worst_overshoot", r.worst_overshoot()},
                {"worst_settling_time", finite_or_inf(r.worst_settling_time())},
                {"weighted_hinf", finite_or_inf(r.weighted_hinf)},
                {"points", std::move(points)}};
    if (r.certificate)
        out["certificate"] = to_json(*r.certificate);
    if (!r.certificate_note.empty())
        out["certificate_note"] = r.certificate_note;
    return out;
}

//------------------------------------------------------------------------------
// CSV
//------------------------------------------------------------------------------

/// Shortest round-trip decimal form, independent of the C locale.
inline std::string format_double(double x)
{
    if (std::isnan(x))
        return "nan";
    if (std::isinf(x))
        return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

/// Header `t_or_omega,ch1,...,chK`, then one row per sample.
inline std::string csv(const std::vector<double>& abscissa, const Mat& values)
{
    require(static_cast<Index>(abscissa.size()) == values.rows(), ErrorKind::dimension,
            "csv: abscissa length differs from the sample count");
    std::string out = "t_or_omega";
    for (Index j = 0; j < values.cols(); ++j)
        out += ",ch" + std::to_string(j + 1);
    out += '\n';
    for (Index i = 0; i < values.rows(); ++i)
    {
        out += format_double(abscissa[static_cast<std::size_t>(i)]);
        for (Index j = 0; j < values.cols(); ++j)
            out += ',' + format_double(values(i, j));
        out += '\n';
    }
    return out;
}

inline std::string csv(const Trajectory& traj)
{
    std::vector<double> t(static_cast<std::size_t>(traj.steps()));
    for (Index k = 0; k < traj.steps(); ++k)
        t[static_cast<std::size_t>(k)] = traj.time(k);
    return csv(t, traj.samples);
}

struct CsvTable
{
    std::vector<std::string> header;
    std::vector<double> abscissa;
    Mat values;
};

inline double parse_double(const std::string& s)
{
    double x = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    {
        if (s == "inf")
            return std::numeric_limits<double>::infinity();
        if (s == "-inf")
            return -std::numeric_limits<double>::infinity();
        if (s == "nan")
            return std::numeric_limits<double>::quiet_NaN();
        fail(ErrorKind::invalid_argument, "csv: bad number '" + s + "'");
    }
    return x;
}

inline CsvTable parse_csv(const std::string& text)
{
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        return cells;
    };
    std::stringstream in(text);
    std::string line;
    CsvTable t;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::invalid_argument,
            "csv: missing header");
    t.header = split(line);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line))
    {
        if (line.empty())
            continue;
        const auto cells = split(line);
        require(cells.size() == t.header.size(), ErrorKind::dimension, "csv: ragged row");
        std::vector<double> row;
        for (const auto& c : cells)
            row.push_back(parse_double(c));
        rows.push_back(std::move(row));
    }
    const auto cols = static_cast<Index>(t.header.size()) - 1;
    t.values.resize(static_cast<Index>(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        t.abscissa.push_back(rows[i][0]);
        for (Index j = 0; j < cols; ++j)
            t.values(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j) + 1];
    }
    return t;
}

} // namespace lpvred::io

#endif // LPVRED_IO_HPP
