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
/// lpvred command-line tool: benchmark generation, reduction, analysis and
/// closed-loop workflows. Every command writes into one output directory
/// holding a manifest.json; `lpvred replay` re-runs a manifest.
///
#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <lpvred/analysis.hpp>
#include <lpvred/bench.hpp>
#include <lpvred/certify.hpp>
#include <lpvred/closedloop.hpp>
#include <lpvred/io.hpp>
#include <lpvred/model.hpp>
#include <lpvred/reduction.hpp>

#ifndef LPVRED_VERSION
#define LPVRED_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace lpvred;
using io::json;

namespace
{

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct GridOptions
{
    int points = 5;
    std::vector<std::string> rho;

    void add(CLI::App* cmd)
    {
        cmd->add_option("--grid-points", points, "Uniform points per scheduling parameter")
            ->check(CLI::Range(1, 101));
        cmd->add_option("--rho", rho,
                        "Explicit grid point as comma-separated values (repeatable)");
    }

    std::vector<Vec> resolve(const ParameterBox& box) const
    {
        if (rho.empty())
            return box.grid(points);
        std::vector<Vec> out;
        for (const auto& text : rho)
        {
            std::vector<double> vals;
            std::stringstream ss(text);
            std::string cell;
            while (std::getline(ss, cell, ','))
                vals.push_back(io::parse_double(cell));
            require(static_cast<int>(vals.size()) == box.size(), ErrorKind::dimension,
                     "--rho '" + text + "' needs " + std::to_string(box.size()) + " values");
            Vec v = Eigen::Map<Vec>(vals.data(), static_cast<Index>(vals.size()));
            require(box.contains(v), ErrorKind::out_of_range,
                     "--rho '" + text + "' lies outside the parameter box");
            out.push_back(v);
        }
        return out;
    }

    json to_json() const { return {{"grid_points", points}, {"rho", rho}}; }
};

json grid_json(const std::vector<Vec>& grid)
{
    json out = json::array();
    for (const Vec& v : grid)
        out.push_back(io::to_json(v));
    return out;
}

/// Collects outputs and writes the manifest when the command finishes.
struct Run
{
    std::string command;
    std::vector<std::string> args;
    fs::path out_dir;
    json config = json::object();
    json inputs = json::array();
    json outputs = json::array();
    std::uint64_t seed = 0;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void prepare()
    {
        fs::create_directories(out_dir);
    }

    std::string path(const std::string& name)
    {
        outputs.push_back(name);
        return (out_dir / name).string();
    }

    void finish() const
    {
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const json manifest = {{"command", command},
                               {"args", args},
                               {"cwd", fs::current_path().string()},
                               {"config", config},
                               {"inputs", inputs},
                               {"outputs", outputs},
                               {"seed", seed},
                               {"version", LPVRED_VERSION},
                               {"threads", thread_count()},
                               {"duration_s", seconds}};
        io::write_json((out_dir / "manifest.json").string(), manifest);
    }
};

std::string stem_label(const std::string& path, std::map<std::string, int>& used)
{
    std::string s = fs::path(path).stem().string();
    if (s.empty())
        s = "model";
    const int n = used[s]++;
    return n == 0 ? s : s + "_" + std::to_string(n + 1);
}

//------------------------------------------------------------------------------
// generate
//------------------------------------------------------------------------------

struct GenerateCmd
{
    MsdConfig cfg;
    std::string out_dir = ".";

    void add(CLI::App& app)
    {
        auto* c = app.add_subcommand("generate", "Write the mass-spring-damper benchmark model");
        c->alias("generate-benchmark");
        c->add_option("--n", cfg.N, "Number of blocks")->required();
        c->add_option("--n-rho", cfg.n_rho, "Number of scheduling parameters");
        c->add_option("--mass", cfg.m, "Block mass");
        c->add_option("--damping", cfg.d, "Damping coefficient");
        c->add_option("--k0", cfg.k0, "Nominal spring stiffness");
        c->add_option("--k-rho", cfg.k_rho, "Stiffness variation per unit rho");
        c->add_option("--out-dir,-o", out_dir, "Output directory");
    }

    void run(Run& r) const
    {
        cfg.validate();
        const LpvModel g = build_msd(cfg);
        r.config = {{"N", cfg.N},   {"n_rho", cfg.n_rho}, {"mass", cfg.m},
                    {"damping", cfg.d}, {"k0", cfg.k0},     {"k_rho", cfg.k_rho}};
        r.prepare();
        io::save_model(r.path("model.json"), g);
        std::cout << "order-" << g.n_x() << " model with n_rho = " << g.n_rho() << " written to "
                  << (r.out_dir / "model.json").string() << '\n';
    }
};

//------------------------------------------------------------------------------
// reduce
//------------------------------------------------------------------------------

struct ReduceCmd
{
    std::string model;
    ReductionConfig cfg;
    std::string structure = "full";
    std::string mask_file;
    bool pin_d = false;
    bool constant_only = false;
    GridOptions grid;
    std::string out_dir = "reduce-out";

    void add(CLI::App& app)
    {
        auto* c = app.add_subcommand("reduce", "Reduce an LPV model by fixed-structure synthesis");
        c->add_option("--model,-m", model, "Input model JSON")->required();
        c->add_option("--order", cfg.order, "Reduced order");
        c->add_option("--structure", structure, "full, modal or custom (with --mask-file)")
            ->check(CLI::IsMember({"full", "modal", "custom"}));
        c->add_option("--mask-file", mask_file, "Custom structure mask JSON");
        c->add_flag("--pin-d", pin_d, "Keep the feedthrough equal to the full model's");
        c->add_flag("--constant-only", constant_only, "Parameter-independent reduced model");
        c->add_option("--seed", cfg.seed, "Multistart seed");
        c->add_option("--starts", cfg.starts, "Number of starts");
        c->add_option("--max-iter", cfg.max_iterations, "Iterations per start");
        c->add_option("--rel-tol", cfg.rel_tol, "H-infinity relative tolerance");
        c->add_flag("--certify", cfg.certify, "Certify the induced L2 error bound");
        c->add_option("--certify-rel-tol", cfg.certify_rel_tol, "Certificate bisection tolerance");
        grid.add(c);
        c->add_option("--out-dir,-o", out_dir, "Output directory");
    }

    void run(Run& r)
    {
        const LpvModel g = io::load_model(model);
        r.inputs.push_back(model);
        if (!mask_file.empty() && structure == "full")
            structure = "custom";
        require(structure != "custom" || !mask_file.empty(), ErrorKind::invalid_argument,
                "--structure custom needs --mask-file");
        require(structure == "custom" || mask_file.empty(), ErrorKind::invalid_argument,
                "--mask-file only applies to --structure custom");
        require(cfg.order >= 1 && cfg.order <= g.n_x(), ErrorKind::invalid_argument,
                "--order must lie in [1, " + std::to_string(g.n_x()) + "]");
        StructureMask mask = structure == "full"
                                 ? StructureMask::full(cfg.order, g.n_u(), g.n_y(), g.n_rho())
                             : structure == "modal"
                                 ? StructureMask::modal(cfg.order, g.n_u(), g.n_y(), g.n_rho())
                                 : io::load_mask(mask_file);
        if (!mask_file.empty())
            r.inputs.push_back(mask_file);
        if (constant_only)
            mask.constant_only();
        if (pin_d)
            mask.pin_d(g.D());
        cfg.grid = grid.resolve(g.box());
        r.seed = cfg.seed;
        r.config = {{"order", cfg.order},
                    {"structure", structure},
                    {"mask_file", mask_file},
                    {"pin_d", pin_d},
                    {"constant_only", constant_only},
                    {"seed", cfg.seed},
                    {"starts", cfg.starts},
                    {"max_iterations", cfg.max_iterations},
                    {"rel_tol", cfg.rel_tol},
                    {"certify", cfg.certify},
                    {"certify_rel_tol", cfg.certify_rel_tol},
                    {"grid", grid_json(cfg.grid)}};
        const ReductionReport rep = reduce(g, cfg, mask);
        r.prepare();
        io::write_json(r.path("report.json"), io::to_json(rep));
        io::save_model(r.path("model.json"), rep.g_red);
        std::cout << "grid_error " << io::format_double(rep.grid_error) << " (baseline "
                  << io::format_double(rep.baseline_grid_error) << ")";
        if (rep.certificate)
            std::cout << ", certified_bound " << io::format_double(rep.certificate->certified_bound);
        std::cout << '\n';
    }
};

//------------------------------------------------------------------------------
// analyze
//------------------------------------------------------------------------------

struct AnalyzeCmd
{
    std::vector<std::string> models;
    GridOptions grid;
    double w_min = 1e-3, w_max = 1e3;
    int n_freq = 400;
    double horizon = 0.0, dt = 0.01;
    bool difference = false;
    std::string out_dir = "analyze-out";

    void add(CLI::App& app)
    {
        auto* c = app.add_subcommand("analyze", "Sigma and step response CSVs per grid point");
        c->add_option("--model,-m", models, "Model JSON (repeatable)")->required();
        grid.add(c);
        c->add_option("--w-min", w_min, "Lowest frequency (rad/s)");
        c->add_option("--w-max", w_max, "Highest frequency (rad/s)");
        c->add_option("--n-freq", n_freq, "Logarithmically spaced frequencies");
        c->add_option("--horizon", horizon, "Step response horizon in seconds (0: none)");
        c->add_option("--dt", dt, "Step response sample time");
        c->add_flag("--difference", difference,
                    "With two models, also write sigma data of their difference");
        c->add_option("--out-dir,-o", out_dir, "Output directory");
    }

    void run(Run& r) const
    {
        require(!difference || models.size() == 2, ErrorKind::invalid_argument,
                "--difference needs exactly two models");
        require(horizon >= 0.0, ErrorKind::invalid_argument, "--horizon must be >= 0");
        const FrequencyGrid freqs = FrequencyGrid::logspace(w_min, w_max, n_freq);
        std::vector<LpvModel> loaded;
        for (const auto& path : models)
        {
            loaded.push_back(io::load_model(path));
            r.inputs.push_back(path);
        }
        const std::vector<Vec> points = grid.resolve(loaded.front().box());
        for (const auto& m : loaded)
            require(m.box() == loaded.front().box(), ErrorKind::invalid_argument,
                    "analyze: models must share the parameter box");
        r.config = {{"grid", grid_json(points)}, {"w_min", w_min},  {"w_max", w_max},
                    {"n_freq", n_freq},          {"horizon", horizon}, {"dt", dt},
                    {"difference", difference}};
        r.prepare();

        auto emit = [&](const LpvModel& m, const std::string& label) {
            for (std::size_t k = 0; k < points.size(); ++k)
            {
                const LtiStateSpace sys = freeze(m, points[k]);
                const std::string tag = "_" + std::to_string(k) + ".csv";
                io::write_text(r.path(label + "_sigma" + tag),
                               io::csv(freqs.values(), sigma_response(sys, freqs)));
                if (horizon > 0.0)
                    io::write_text(r.path(label + "_step" + tag),
                                   io::csv(step_response(sys, horizon, dt)));
            }
        };
        std::map<std::string, int> used;
        for (std::size_t i = 0; i < loaded.size(); ++i)
            emit(loaded[i], stem_label(models[i], used));
        if (difference)
            emit(lpvred::difference(loaded[0], loaded[1]), "difference");
        std::cout << r.outputs.size() << " CSV files written to " << r.out_dir.string() << '\n';
    }
};

//------------------------------------------------------------------------------
// closedloop
//------------------------------------------------------------------------------

struct ClosedLoopCmd
{
    std::string full_model, design_model, weights_file;
    Index order = 0;
    std::string structure = "full";
    ReductionConfig cfg;
    GridOptions grid;
    double horizon = 60.0, dt = 0.01;
    bool certify_loop = false;
    std::string out_dir = "closedloop-out";

    void add(CLI::App& app)
    {
        auto* c = app.add_subcommand("closedloop",
                                     "Design a controller on one model and validate it on another");
        c->add_option("--full-model", full_model, "Model used for validation")->required();
        c->add_option("--design-model", design_model, "Model used for synthesis (default: full)");
        c->add_option("--order", order,
                      "Controller order (default: 4 + weight order)");
        c->add_option("--structure", structure, "Controller structure: full or modal")
            ->check(CLI::IsMember({"full", "modal"}));
        c->add_option("--weights", weights_file, "JSON with LTI models \"We\" and \"Wu\"");
        c->add_option("--seed", cfg.seed, "Multistart seed");
        c->add_option("--starts", cfg.starts, "Number of starts");
        c->add_option("--max-iter", cfg.max_iterations, "Iterations per start");
        grid.add(c);
        c->add_option("--horizon", horizon, "Step response horizon in seconds");
        c->add_option("--dt", dt, "Step response sample time");
        c->add_flag("--certify", certify_loop, "Certify the weighted closed loop");
        c->add_option("--out-dir,-o", out_dir, "Output directory");
    }

    void run(Run& r)
    {
        const LpvModel g = io::load_model(full_model);
        r.inputs.push_back(full_model);
        const std::string design_path = design_model.empty() ? full_model : design_model;
        const LpvModel gd = design_model.empty() ? g : io::load_model(design_model);
        if (!design_model.empty())
            r.inputs.push_back(design_model);
        require(gd.n_u() == g.n_u() && gd.n_y() == g.n_y() && gd.box() == g.box(),
                ErrorKind::invalid_argument,
                "closedloop: design and full models differ in channels or parameter box");
        Weights w = Weights::defaults();
        if (!weights_file.empty())
        {
            const json wj = io::read_json(weights_file);
            require(wj.contains("We") && wj.contains("Wu"), ErrorKind::invalid_argument,
                    "closedloop: weights file needs \"We\" and \"Wu\"");
            w = {io::lti_from_json(wj["We"]), io::lti_from_json(wj["Wu"])};
            r.inputs.push_back(weights_file);
        }
        if (order == 0)
            order = ReductionConfig{}.order + w.We.n_x();
        require(order >= 1, ErrorKind::invalid_argument, "--order must be >= 1");
        cfg.grid = grid.resolve(g.box());
        cfg.order = order;
        r.seed = cfg.seed;
        r.config = {{"design_model", design_path},
                    {"order", order},
                    {"structure", structure},
                    {"seed", cfg.seed},
                    {"starts", cfg.starts},
                    {"max_iterations", cfg.max_iterations},
                    {"grid", grid_json(cfg.grid)},
                    {"horizon", horizon},
                    {"dt", dt},
                    {"certify", certify_loop},
                    {"weights", {{"We", io::to_json(LpvModel::from_lti(w.We))},
                                 {"Wu", io::to_json(LpvModel::from_lti(w.Wu))}}}};

        const PlantModel plant = mixed_sensitivity_plant(gd, w);
        const StructureMask mask =
            structure == "modal" ? StructureMask::modal(order, g.n_y(), g.n_u(), g.n_rho())
                                 : StructureMask::full(order, g.n_y(), g.n_u(), g.n_rho());
        const SynthesisResult syn = synthesize_controller(plant, order, mask, cfg);
        const ClosedLoopReport rep = validate(g, syn.k, cfg.grid, horizon, dt, w, certify_loop);

        r.prepare();
        json report = io::to_json(rep);
        report["design_value"] = syn.value;
        report["design_history"] = syn.history;
        report["winning_start"] = syn.winning_start;
        io::write_json(r.path("report.json"), report);
        io::save_model(r.path("controller.json"), syn.k);
        for (std::size_t k = 0; k < rep.steps.size(); ++k)
            io::write_text(r.path("step_" + std::to_string(k) + ".csv"), io::csv(rep.steps[k]));
        std::cout << (rep.stable_on_grid() ? "stable" : "NOT stable") << " on the grid; "
                  << "steady-state error " << io::format_double(rep.worst_steady_state_error())
                  << ", overshoot " << io::format_double(rep.worst_overshoot())
                  << ", settling " << io::format_double(rep.worst_settling_time()) << " s\n";
    }
};

//------------------------------------------------------------------------------
// Driver
//------------------------------------------------------------------------------

void print_error(const std::string& kind, const std::string& message, int code)
{
    std::cerr << json{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}}.dump()
              << '\n';
}

int run_cli(std::vector<std::string> args);

struct ReplayCmd
{
    std::string manifest;
    std::string out_dir;

    void add(CLI::App& app)
    {
        auto* c = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
        c->add_option("manifest", manifest, "manifest.json of an earlier run")->required();
        c->add_option("--out-dir,-o", out_dir, "Output directory for the re-run")->required();
    }

    int run() const
    {
        const json m = io::read_json(manifest);
        require(m.contains("args") && m["args"].is_array(), ErrorKind::invalid_argument,
                "replay: manifest has no argument list");
        std::vector<std::string> args;
        const auto recorded = m["args"].get<std::vector<std::string>>();
        for (std::size_t i = 0; i < recorded.size(); ++i)
        {
            if (recorded[i] == "--out-dir" || recorded[i] == "-o")
            {
                ++i;
                continue;
            }
            if (recorded[i].rfind("--out-dir=", 0) == 0)
                continue;
            args.push_back(recorded[i]);
        }
        require(!args.empty() && args.front() != "replay", ErrorKind::invalid_argument,
                "replay: manifest does not record a command");
        args.push_back("--out-dir");
        args.push_back(fs::absolute(out_dir).string());
        if (m.contains("cwd"))
            fs::current_path(m["cwd"].get<std::string>());
        return run_cli(args);
    }
};

int run_cli(std::vector<std::string> args)
{
    CLI::App app{"lpvred: model order reduction for LPV systems", "lpvred"};
    app.set_version_flag("--version", LPVRED_VERSION);
    app.require_subcommand(1);
    int threads = -1;
    app.add_option("--threads", threads, "Worker threads (0: all cores; default LPVRED_THREADS)");

    GenerateCmd gen;
    ReduceCmd red;
    AnalyzeCmd ana;
    ClosedLoopCmd cl;
    ReplayCmd rep;
    gen.add(app);
    red.add(app);
    ana.add(app);
    cl.add(app);
    rep.add(app);

    try
    {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::CallForAllHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::CallForVersion& e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e)
    {
        print_error("usage", e.what(), kExitUsage);
        return kExitUsage;
    }

    if (threads >= 0)
        set_thread_count(threads);

    try
    {
        CLI::App* sub = app.get_subcommands().front();
        if (sub->get_name() == "replay")
            return rep.run();
        Run r;
        r.command = sub->get_name();
        r.args = args;
        if (r.command == "generate")
        {
            r.out_dir = gen.out_dir;
            gen.run(r);
        }
        else if (r.command == "reduce")
        {
            r.out_dir = red.out_dir;
            red.run(r);
        }
        else if (r.command == "analyze")
        {
            r.out_dir = ana.out_dir;
            ana.run(r);
        }
        else
        {
            r.out_dir = cl.out_dir;
            cl.run(r);
        }
        r.finish();
        return 0;
    }
    catch (const Error& e)
    {
        const int code = e.is_usage() ? kExitUsage : kExitNumerical;
        print_error(to_string(e.kind()), e.what(), code);
        return code;
    }
    catch (const fs::filesystem_error& e)
    {
        print_error("io", e.what(), kExitUsage);
        return kExitUsage;
    }
    catch (const std::exception& e)
    {
        print_error("internal", e.what(), kExitNumerical);
        return kExitNumerical;
    }
}

} // namespace

int main(int argc, char** argv)
{
    return run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
