#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "qbsde/config.hpp"
#include "qbsde/instances.hpp"

namespace qbsde {

namespace run_detail {

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

inline json report_json(const TheoremReport& r) {
    json j;
    j["theorem"] = theorem_name(r.id);
    j["applicable"] = r.applicable;
    j["pass"] = r.pass;
    j["worst_slack"] = r.worst_slack;
    j["tolerance"] = r.tolerance;
    if (!r.instance_descriptor.empty()) j["instance"] = r.instance_descriptor;
    return j;
}

inline json diagnostics_json(const DiscreteSolution& sol) {
    json j;
    j["picard_iters_max"] = sol.diag.picard_iters_max;
    j["bound_violations"] = sol.diag.bound_violations;
    j["z_clamps"] = sol.diag.z_clamps;
    j["energy_estimate"] = sol.diag.energy_estimate;
    j["y_min"] = sol.y_min;
    j["y_max"] = sol.y_max;
    return j;
}

inline std::string solution_csv(const DiscreteSolution& sol, const std::string& hash) {
    std::ostringstream os;
    os << "# config_hash=" << hash << "\n";
    if (sol.backend == Backend::Lattice) {
        os << "step,time,node,state,Y,Z,energy\n";
        for (std::size_t i = 0; i < sol.Y.size(); ++i)
            for (std::size_t j = 0; j < sol.Y[i].size(); ++j)
                os << i << ',' << fmt(sol.times[i]) << ',' << j << ','
                   << fmt(sol.node_state(static_cast<int>(i), static_cast<int>(j))) << ','
                   << fmt(sol.Y[i][j]) << ',' << fmt(sol.Z[i][j]) << ','
                   << fmt(sol.energy[i][j]) << "\n";
    } else {
        os << "step,time,path,Y";
        for (int k = 0; k < sol.d; ++k) os << ",Z" << k;
        os << "\n";
        for (std::size_t i = 0; i < sol.path_Y.size(); ++i)
            for (int p = 0; p < sol.n_paths_stored; ++p) {
                os << i << ',' << fmt(sol.times[i]) << ',' << p << ','
                   << fmt(sol.path_Y[i][p]);
                for (int k = 0; k < sol.d; ++k)
                    os << ',' << fmt(sol.path_Z[i][static_cast<std::size_t>(p) * sol.d + k]);
                os << "\n";
            }
    }
    return os.str();
}

inline std::string strategy_csv(const StrategyProcess& sp, const DiscreteSolution& sol,
                                const std::string& hash) {
    std::ostringstream os;
    os << "# config_hash=" << hash << "\n";
    os << "step,time,node,state,Y,Z,strategy\n";
    for (std::size_t i = 0; i < sp.values.size(); ++i)
        for (std::size_t j = 0; j < sp.values[i].size(); ++j)
            os << i << ',' << fmt(sol.times[i]) << ',' << j << ','
               << fmt(sol.node_state(static_cast<int>(i), static_cast<int>(j))) << ','
               << fmt(sol.Y[i][j]) << ',' << fmt(sol.Z[i][j]) << ',' << fmt(sp.values[i][j])
               << "\n";
    return os.str();
}

inline std::string path_strategy_csv(const PathStrategy& ps, const DiscreteSolution& sol,
                                     const std::string& hash) {
    std::ostringstream os;
    os << "# config_hash=" << hash << "\n";
    os << "step,time,path";
    for (int k = 0; k < sol.d; ++k) os << ",strategy" << k;
    os << "\n";
    for (std::size_t i = 0; i < ps.values.size(); ++i)
        for (int p = 0; p < sol.n_paths_stored; ++p) {
            os << i << ',' << fmt(sol.times[i]) << ',' << p;
            for (int k = 0; k < sol.d; ++k)
                os << ',' << fmt(ps.values[i][static_cast<std::size_t>(p) * sol.d + k]);
            os << "\n";
        }
    return os.str();
}

inline json r_process_json(const RProcessReport& rep, const std::string& hash) {
    json j;
    j["config_hash"] = hash;
    j["pass"] = rep.pass;
    j["worst_slack"] = rep.worst_slack;
    json arr = json::array();
    for (const auto& t : rep.tests) {
        arr.push_back({{"strategy", t.strategy},
                       {"tau_step", t.tau_step},
                       {"sigma_step", t.sigma_step},
                       {"kind", t.martingale ? "martingale" : "supermartingale"},
                       {"diff_mean", t.diff_mean},
                       {"band", t.band},
                       {"pass", t.pass}});
    }
    j["tests"] = arr;
    return j;
}

inline GeneratorSpec build_generator(const ExperimentConfig& cfg) {
    const auto& set = *cfg.constraint;
    if (cfg.generator_kind == "power")
        return make_power_generator(cfg.model, set, cfg.gen_gamma_u);
    if (cfg.generator_kind == "log") return make_log_generator(cfg.model, set);
    if (cfg.generator_kind == "custom")
        return make_custom_generator(cfg.model, cfg.gen_c0, cfg.gen_cy, cfg.gen_cz2);
    return make_exponential_generator(cfg.model, set, cfg.gen_alpha);
}

inline BSDEProblem build_solve_problem(const ExperimentConfig& cfg) {
    GeneratorSpec F = build_generator(cfg);
    const double beta = cfg.generator_kind == "exponential" ? cfg.gen_alpha : cfg.solve_beta;
    BSDEProblem p = BSDEProblem::eq1(std::move(F), beta, cfg.solve_terminal, cfg.n_steps,
                                     cfg.backend);
    p.picard = cfg.picard;
    p.regression.n_paths = cfg.n_paths;
    p.regression.basis_degree = cfg.basis_degree;
    p.regression.seed = cfg.seed;
    return p;
}

/// Closed-form Y_0 for unconstrained constant-coefficient utility runs.
inline std::optional<double> merton_y0(const ExperimentConfig& cfg) {
    if (!cfg.utility || !cfg.constraint ||
        cfg.constraint->kind() != ConstraintSet::Kind::FullSpace ||
        !cfg.model.constant_coefficients)
        return std::nullopt;
    const double ml2 = (cfg.model.m0 * cfg.model.lam0).squaredNorm();
    const double T = cfg.model.horizon;
    switch (cfg.utility->kind) {
        case UtilityKind::Exponential:
            if (cfg.utility->B.sup_norm != 0.0) return std::nullopt;
            return -ml2 * T / (2.0 * cfg.utility->alpha);
        case UtilityKind::Power:
            return cfg.utility->gamma_u / (2.0 * (1.0 - cfg.utility->gamma_u)) * ml2 * T;
        case UtilityKind::Log: return 0.5 * ml2 * T;
    }
    return std::nullopt;
}

}  // namespace run_detail

/// Runs the verify command's theorem list against the reference instances
/// and canonical constructions; appends one report per (theorem, instance).
inline std::vector<TheoremReport> run_verify_suite(const ExperimentConfig& cfg) {
    std::vector<TheoremReport> reports;
    auto want = [&](const std::string& name) {
        return cfg.theorems.empty() ||
               std::find(cfg.theorems.begin(), cfg.theorems.end(), name) != cfg.theorems.end();
    };

    const bool bounds = want("prop1_bounds");
    const bool energy = want("prop1_energy");
    const bool unique = want("thm2_uniqueness");
    if (bounds || energy || unique) {
        for (auto& inst : reference_instances(cfg.n_steps)) {
            inst.problem.picard = cfg.picard;
            if (bounds || energy) {
                const DiscreteSolution sol = solve_lattice(inst.problem);
                if (bounds) {
                    TheoremReport r = check_prop1(inst.problem, sol);
                    r.instance_descriptor = inst.name;
                    reports.push_back(r);
                }
                if (energy) {
                    TheoremReport r = check_prop1_energy(inst.problem, sol);
                    r.instance_descriptor = inst.name;
                    reports.push_back(r);
                }
            }
            if (unique) {
                TheoremReport r = check_uniqueness(inst.problem);
                r.instance_descriptor = inst.name;
                reports.push_back(r);
            }
        }
    }
    if (want("thm3_comparison")) {
        for (auto& [a, b] : comparison_pairs(cfg.n_steps)) {
            a.problem.picard = cfg.picard;
            b.problem.picard = cfg.picard;
            TheoremReport r = check_comparison(a.problem, b.problem, cfg.tolerance_lattice);
            r.instance_descriptor = a.name + " <= " + b.name;
            reports.push_back(r);
        }
    }
    if (want("prop3_stability")) {
        const Eq2Problem g = ladder_instance();
        const double v_max = cfg.ladder_v_max > 0.0 ? cfg.ladder_v_max : 64.0;
        const auto grid = ladder_grid(v_max, cfg.ladder_grid_points);
        LadderResult lr = check_stability_ladder(g, cfg.n_list, grid, {}, cfg.n_steps, cfg.picard);
        lr.report.instance_descriptor = "quadratic ladder";
        reports.push_back(lr.report);
    }
    if (want("prop2_appendix_bound")) {
        for (auto& inst : prop2_instances(cfg.n_steps)) {
            inst.problem.picard = cfg.picard;
            TheoremReport r = check_prop2_bound(inst.problem);
            r.instance_descriptor = inst.name;
            reports.push_back(r);
        }
    }
    if (want("transform_roundtrip")) {
        const auto model = MarketModel::constant1d(1.0, 0.5, 1.0);
        const auto B = clipped_linear_terminal(0.5, 0.5);
        for (double alpha : {0.5, 1.0, 2.0}) {
            const auto F = make_exponential_generator(
                model, ConstraintSet::box(v1(-1.0), v1(1.0)), alpha);
            TheoremReport r = check_transform_roundtrip(F, alpha, B, cfg.n_steps, cfg.picard);
            r.instance_descriptor = "exp/box/a=" + std::to_string(alpha);
            reports.push_back(r);
        }
    }
    return reports;
}

/// Executes the experiment and writes results.json, solution.csv,
/// strategy.csv and the resolved-config echo into the output directory.
/// Returns 0 on success, 1 if an applicable check failed.
inline int run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    using namespace run_detail;
    fs::create_directories(cfg.output_directory);
    const std::string dump = cfg.resolved.dump(2);
    const std::string hash = hex64(fnv1a64(dump.data(), dump.size()));
    write_text(fs::path(cfg.output_directory) / "config_resolved.json", dump + "\n");

    json results;
    results["config_hash"] = hash;
    results["command"] = cfg.command;
    int exit_code = 0;

    const bool csv = std::find(cfg.formats.begin(), cfg.formats.end(), "csv") != cfg.formats.end();

    if (cfg.command == "solve") {
        const BSDEProblem p = build_solve_problem(cfg);
        const DiscreteSolution sol = solve(p);
        results["Y0"] = sol.y0;
        results["Z0"] = sol.z0(0);
        if (const auto cert = p.certificate()) {
            const AprioriBounds b = apriori_bounds(*cert, p.terminal_fn().sup_norm);
            results["bounds"] = {{"c_low", b.c_low},
                                 {"c_high", b.c_high},
                                 {"energy_constant",
                                  energy_bound_constant(*cert, p.terminal_fn().sup_norm)}};
        }
        results["diagnostics"] = diagnostics_json(sol);
        if (csv)
            write_text(fs::path(cfg.output_directory) / "solution.csv",
                       solution_csv(sol, hash));
    } else if (cfg.command == "maximize") {
        if (!cfg.utility) throw ConfigError("maximize needs a utility block", {"$.utility"});
        BSDEProblem p = build_utility_bsde(*cfg.utility, cfg.model, *cfg.constraint, cfg.n_steps,
                                           cfg.backend);
        p.picard = cfg.picard;
        p.regression.n_paths = cfg.n_paths;
        p.regression.basis_degree = cfg.basis_degree;
        p.regression.seed = cfg.seed;
        const DiscreteSolution sol = solve(p);
        const double V0 = compose_value(*cfg.utility, cfg.utility->x, sol.y0);
        results["Y0"] = sol.y0;
        results["V0"] = V0;
        if (const auto cert = p.certificate()) {
            const AprioriBounds b = apriori_bounds(*cert, p.terminal_fn().sup_norm);
            results["bounds"] = {{"c_low", b.c_low},
                                 {"c_high", b.c_high},
                                 {"energy_constant",
                                  energy_bound_constant(*cert, p.terminal_fn().sup_norm)}};
        }
        if (const auto exact = merton_y0(cfg)) {
            results["Y0_closed_form"] = *exact;
            results["V0_closed_form"] = compose_value(*cfg.utility, cfg.utility->x, *exact);
        }
        results["diagnostics"] = diagnostics_json(sol);
        if (sol.backend == Backend::Lattice) {
            const StrategyProcess sp =
                optimal_strategy(*cfg.utility, sol, cfg.model, *cfg.constraint);
            results["strategy0"] = sp.values.empty() ? 0.0 : sp.values[0][0];
            results["admissibility"] = {
                {"membership_failures", sp.admissibility.membership_failures},
                {"proxy_ok", sp.admissibility.proxy_ok},
                {"worst_proxy_slack", sp.admissibility.worst_proxy_slack}};
            if (csv) {
                write_text(fs::path(cfg.output_directory) / "strategy.csv",
                           strategy_csv(sp, sol, hash));
                write_text(fs::path(cfg.output_directory) / "solution.csv",
                           solution_csv(sol, hash));
            }
            // martingale/supermartingale certificate; the 3 sigma bands are
            // exactly calibrated when Y is deterministic (constant
            // coefficients, no liability), so emit it only then
            if (cfg.model.constant_coefficients && cfg.utility->B.sup_norm == 0.0 &&
                cfg.model.d == 1) {
                const auto bundle = simulate_paths(cfg.model, cfg.n_paths, 8, cfg.seed);
                const auto rp =
                    verify_R_process(*cfg.utility, cfg.model, *cfg.constraint, sol, bundle);
                results["r_process"] = {{"pass", rp.pass}, {"worst_slack", rp.worst_slack}};
                write_text(fs::path(cfg.output_directory) / "r_process.json",
                           r_process_json(rp, hash).dump(2) + "\n");
                if (!rp.pass) exit_code = 1;
            }
        } else {
            if (cfg.model.constant_coefficients) {
                const PathStrategy ps =
                    optimal_strategy_paths(*cfg.utility, sol, cfg.model, *cfg.constraint);
                results["admissibility"] = {
                    {"membership_failures", ps.admissibility.membership_failures},
                    {"proxy_ok", ps.admissibility.proxy_ok}};
                if (csv)
                    write_text(fs::path(cfg.output_directory) / "strategy.csv",
                               path_strategy_csv(ps, sol, hash));
            }
            if (csv)
                write_text(fs::path(cfg.output_directory) / "solution.csv",
                           solution_csv(sol, hash));
        }
    } else if (cfg.command == "verify") {
        const auto reports = run_verify_suite(cfg);
        json arr = json::array();
        int applicable = 0, passed = 0;
        for (const auto& r : reports) {
            arr.push_back(report_json(r));
            if (r.applicable) {
                ++applicable;
                if (r.pass)
                    ++passed;
                else
                    exit_code = 1;
            }
        }
        results["reports"] = arr;
        results["applicable"] = applicable;
        results["passed"] = passed;
    } else if (cfg.command == "ladder") {
        const Eq2Problem g = ladder_instance();
        const double v_max = cfg.ladder_v_max > 0.0 ? cfg.ladder_v_max : 64.0;
        const auto grid = ladder_grid(v_max, cfg.ladder_grid_points);
        const LadderResult lr =
            check_stability_ladder(g, cfg.n_list, grid, {}, cfg.n_steps, cfg.picard);
        results["report"] = report_json(lr.report);
        results["n_list"] = cfg.n_list;
        results["U0"] = lr.u0;
        results["U0_direct"] = lr.u0_direct;
        results["sup_gap"] = lr.sup_gap;
        results["v_energy"] = lr.v_energy;
        results["phi_L_gap"] = lr.phi_L_gap;
        if (lr.report.applicable && !lr.report.pass) exit_code = 1;
    }

    write_text(fs::path(cfg.output_directory) / "results.json", results.dump(2) + "\n");
    return exit_code;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return ExperimentConfig::parse(j);
}

/// `qbsde run <config>`: exit 0 success, 1 applicable-check failure,
/// 2 config error.
inline int run(const std::string& config_path) {
    ExperimentConfig cfg;
    try {
        cfg = load_config(config_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        for (const auto& p : e.paths) std::cerr << "  at " << p << "\n";
        return 2;
    }
    try {
        return run_experiment(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        for (const auto& p : e.paths) std::cerr << "  at " << p << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

inline int validate(const std::string& config_path) {
    try {
        load_config(config_path);
        std::cout << "ok\n";
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        for (const auto& p : e.paths) std::cerr << "  at " << p << "\n";
        return 2;
    }
}

/// `qbsde converge <config> --N 50,100,200,400`: one row per N with the
/// error against the closed form when available, else against the finest N.
inline int converge(const std::string& config_path, const std::vector<int>& N_list) {
    ExperimentConfig cfg;
    try {
        cfg = load_config(config_path);
        if (N_list.empty() || !std::is_sorted(N_list.begin(), N_list.end()) ||
            std::adjacent_find(N_list.begin(), N_list.end()) != N_list.end())
            throw ConfigError("N list must be strictly increasing");
        if (cfg.backend != Backend::Lattice)
            throw ConfigError("converge requires the lattice backend");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        for (const auto& p : e.paths) std::cerr << "  at " << p << "\n";
        return 2;
    }
    try {
        namespace fs = std::filesystem;
        using namespace run_detail;
        fs::create_directories(cfg.output_directory);
        const std::string dump = cfg.resolved.dump(2);
        const std::string hash = hex64(fnv1a64(dump.data(), dump.size()));

        std::vector<double> y0s;
        for (int N : N_list) {
            ExperimentConfig c = cfg;
            c.n_steps = N;
            if (cfg.command == "maximize" && cfg.utility) {
                BSDEProblem p =
                    build_utility_bsde(*cfg.utility, c.model, *c.constraint, N, Backend::Lattice);
                p.picard = c.picard;
                y0s.push_back(solve_lattice(p).y0);
            } else {
                BSDEProblem p = build_solve_problem(c);
                p.n_steps = N;
                y0s.push_back(solve_lattice(p).y0);
            }
        }
        const auto exact = merton_y0(cfg);
        const double ref = exact ? *exact : y0s.back();

        std::ostringstream os;
        os << "# config_hash=" << hash << "\n";
        os << "N,Y0,error,reference\n";
        for (std::size_t i = 0; i < N_list.size(); ++i)
            os << N_list[i] << ',' << fmt(y0s[i]) << ',' << fmt(std::abs(y0s[i] - ref)) << ','
               << (exact ? "closed_form" : "finest") << "\n";
        write_text(fs::path(cfg.output_directory) / "convergence.csv", os.str());
        std::cout << os.str();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace qbsde
