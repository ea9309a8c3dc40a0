#pragma once

#include <json.hpp>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbsde/maximize.hpp"
#include "qbsde/verify.hpp"

namespace qbsde {

using json = nlohmann::ordered_json;

/// Config rejection; `paths` lists every offending location.
struct ConfigError : std::runtime_error {
    std::vector<std::string> paths;
    explicit ConfigError(const std::string& msg, std::vector<std::string> p = {})
        : std::runtime_error(msg), paths(std::move(p)) {}
};

namespace cfg_detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed,
                           const std::string& where, std::vector<std::string>& bad) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) bad.push_back(where + "." + it.key());
}

inline double num(const json& j, const std::string& key, double fallback, bool* present = nullptr) {
    if (!j.contains(key)) {
        if (present) *present = false;
        return fallback;
    }
    if (present) *present = true;
    if (!j[key].is_number()) throw ConfigError("expected a number", {key});
    return j[key].get<double>();
}

inline Vec vec_of(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw ConfigError("expected a non-empty array", {path});
    Vec v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ConfigError("expected numbers", {path});
        v(static_cast<int>(i)) = j[i].get<double>();
    }
    return v;
}

}  // namespace cfg_detail

/// Parsed and validated experiment description: the CLI front door.
/// Schema violations are collected into a single ConfigError listing every
/// offending path; unknown keys are rejected.
struct ExperimentConfig {
    std::string command;  // solve | maximize | verify | ladder

    MarketModel model;
    std::optional<ConstraintSet> constraint;

    // utility block (maximize / verify base)
    std::optional<UtilitySpec> utility;

    // generator block (solve / verify base)
    std::string generator_kind;  // exponential | power | log | custom
    double gen_alpha = 1.0;
    double gen_gamma_u = 0.5;
    double gen_c0 = 0.0, gen_cy = 0.0, gen_cz2 = 0.0;
    Terminal solve_terminal;
    double solve_beta = 0.0;

    // numerics
    Backend backend = Backend::Lattice;
    int n_steps = 400;
    int n_paths = 100000;
    std::uint64_t seed = 1;
    PicardOptions picard;
    int basis_degree = 4;

    // verify block
    std::vector<std::string> theorems;
    double tolerance_lattice = 1e-9;

    // ladder block
    std::vector<int> n_list = {2, 4, 8, 16, 32};
    double ladder_v_max = 0.0;  // 0 = derive from the energy certificate
    int ladder_grid_points = 513;

    std::string output_directory = "out";
    std::vector<std::string> formats = {"json", "csv"};

    json resolved;  // config with defaults filled in, echoed to disk

    static Terminal parse_terminal(const json& j, const std::string& where,
                                   std::vector<std::string>& bad) {
        if (j.is_null()) return Terminal::zero(1);
        cfg_detail::reject_unknown(j, {"kind", "value", "scale", "clip"}, where, bad);
        const std::string kind = j.value("kind", "zero");
        if (kind == "zero") return Terminal::zero(1);
        if (kind == "constant") {
            const double v = cfg_detail::num(j, "value", 0.0);
            return Terminal::constant(v);
        }
        if (kind == "clipped_linear") {
            const double scale = cfg_detail::num(j, "scale", 1.0);
            const double clip = cfg_detail::num(j, "clip", 1.0);
            if (!(clip >= 0.0)) throw ConfigError("terminal clip must be >= 0", {where + ".clip"});
            return Terminal::of(
                [scale, clip](const Vec& w) { return std::clamp(scale * w(0), -clip, clip); },
                clip);
        }
        bad.push_back(where + ".kind");
        return Terminal::zero(1);
    }

    static ConstraintSet parse_constraint(const json& j, const std::string& where,
                                          std::vector<std::string>& bad,
                                          bool require_zero = true) {
        if (!j.is_object() || !j.contains("kind"))
            throw ConfigError("constraint block needs a kind", {where});
        const std::string kind = j["kind"].get<std::string>();
        using cfg_detail::vec_of;
        if (kind == "full_space") {
            cfg_detail::reject_unknown(j, {"kind", "d"}, where, bad);
            return ConstraintSet::full_space(j.value("d", 1));
        }
        if (kind == "singleton") {
            cfg_detail::reject_unknown(j, {"kind", "point"}, where, bad);
            return ConstraintSet::singleton(vec_of(j.at("point"), where + ".point"), require_zero);
        }
        if (kind == "box") {
            cfg_detail::reject_unknown(j, {"kind", "lower", "upper"}, where, bad);
            return ConstraintSet::box(vec_of(j.at("lower"), where + ".lower"),
                                      vec_of(j.at("upper"), where + ".upper"), require_zero);
        }
        if (kind == "ball") {
            cfg_detail::reject_unknown(j, {"kind", "center", "radius"}, where, bad);
            return ConstraintSet::ball(vec_of(j.at("center"), where + ".center"),
                                       cfg_detail::num(j, "radius", 1.0), require_zero);
        }
        if (kind == "finite_set") {
            cfg_detail::reject_unknown(j, {"kind", "points"}, where, bad);
            std::vector<Vec> pts;
            for (const auto& p : j.at("points")) pts.push_back(vec_of(p, where + ".points"));
            return ConstraintSet::finite_set(std::move(pts), require_zero);
        }
        if (kind == "union") {
            cfg_detail::reject_unknown(j, {"kind", "members"}, where, bad);
            std::vector<ConstraintSet> members;
            int k = 0;
            for (const auto& mj : j.at("members"))
                members.push_back(parse_constraint(
                    mj, where + ".members[" + std::to_string(k++) + "]", bad, false));
            return ConstraintSet::union_of(std::move(members), require_zero);
        }
        if (kind == "halfspace") {
            cfg_detail::reject_unknown(j, {"kind", "normal", "offset"}, where, bad);
            return ConstraintSet::halfspace(vec_of(j.at("normal"), where + ".normal"),
                                            cfg_detail::num(j, "offset", 0.0), require_zero);
        }
        throw ConfigError("unknown constraint kind '" + kind + "'", {where + ".kind"});
    }

    static ExperimentConfig parse(const json& j) {
        std::vector<std::string> bad;
        ExperimentConfig c;
        cfg_detail::reject_unknown(
            j, {"command", "model", "constraint", "utility", "generator", "numerics", "verify",
                "ladder", "output"},
            "$", bad);

        if (!j.contains("command") || !j["command"].is_string())
            throw ConfigError("missing command", {"$.command"});
        c.command = j["command"].get<std::string>();
        if (c.command != "solve" && c.command != "maximize" && c.command != "verify" &&
            c.command != "ladder")
            throw ConfigError("command must be solve|maximize|verify|ladder", {"$.command"});

        // ---- model
        if (!j.contains("model")) throw ConfigError("missing model block", {"$.model"});
        {
            const json& m = j["model"];
            cfg_detail::reject_unknown(m, {"d", "m", "lambda", "T", "a_lambda"}, "$.model", bad);
            const int d = static_cast<int>(cfg_detail::num(m, "d", 1));
            if (d < 1) throw ConfigError("model.d must be >= 1", {"$.model.d"});
            const double T = cfg_detail::num(m, "T", 1.0);
            if (!(T > 0.0) || !std::isfinite(T))
                throw ConfigError("model.T must be positive and finite", {"$.model.T"});
            Mat mm = Mat::Identity(d, d);
            if (m.contains("m")) {
                const json& rows = m["m"];
                if (!rows.is_array() || static_cast<int>(rows.size()) != d)
                    throw ConfigError("model.m must be a d x d matrix", {"$.model.m"});
                for (int r = 0; r < d; ++r) {
                    const Vec row = cfg_detail::vec_of(rows[r], "$.model.m");
                    if (row.size() != d)
                        throw ConfigError("model.m must be a d x d matrix", {"$.model.m"});
                    for (int cidx = 0; cidx < d; ++cidx) mm(r, cidx) = row(cidx);
                }
            }
            Vec lam = Vec::Zero(d);
            if (m.contains("lambda")) lam = cfg_detail::vec_of(m["lambda"], "$.model.lambda");
            if (lam.size() != d)
                throw ConfigError("model.lambda must have d entries", {"$.model.lambda"});
            c.model = MarketModel::constant(mm, lam, T);
            bool has_al = false;
            const double al = cfg_detail::num(m, "a_lambda", c.model.a_lambda, &has_al);
            if (has_al) c.model.a_lambda = al;
        }

        // ---- constraint
        if (j.contains("constraint"))
            c.constraint = parse_constraint(j["constraint"], "$.constraint", bad);
        else
            c.constraint = ConstraintSet::full_space(c.model.d);
        if (c.constraint->dim() != c.model.d)
            throw ConfigError("constraint dimension must match model.d", {"$.constraint"});

        // ---- utility
        if (j.contains("utility")) {
            const json& u = j["utility"];
            cfg_detail::reject_unknown(u, {"kind", "alpha", "gamma_u", "B", "x"}, "$.utility",
                                       bad);
            const std::string kind = u.value("kind", "exponential");
            const double x = cfg_detail::num(u, "x", 1.0);
            if (kind == "exponential") {
                const double alpha = cfg_detail::num(u, "alpha", 1.0);
                if (!(alpha > 0.0))
                    throw ConfigError("utility.alpha must be > 0", {"$.utility.alpha"});
                Terminal B = parse_terminal(u.contains("B") ? u["B"] : json(), "$.utility.B", bad);
                c.utility = UtilitySpec::exponential(alpha, std::move(B), x);
            } else if (kind == "power") {
                if (u.contains("B") && u["B"].value("kind", "zero") != "zero")
                    throw ConfigError("power utility admits no liability", {"$.utility.B"});
                const double gu = cfg_detail::num(u, "gamma_u", 0.5);
                if (!(gu > 0.0 && gu < 1.0))
                    throw ConfigError("utility.gamma_u must lie in (0,1)", {"$.utility.gamma_u"});
                if (!(x > 0.0)) throw ConfigError("power utility needs x > 0", {"$.utility.x"});
                c.utility = UtilitySpec::power(gu, x);
            } else if (kind == "log") {
                if (u.contains("B") && u["B"].value("kind", "zero") != "zero")
                    throw ConfigError("log utility admits no liability", {"$.utility.B"});
                if (!(x > 0.0)) throw ConfigError("log utility needs x > 0", {"$.utility.x"});
                c.utility = UtilitySpec::log_utility(x);
            } else {
                throw ConfigError("unknown utility kind", {"$.utility.kind"});
            }
        }

        // ---- generator (for solve)
        if (j.contains("generator")) {
            const json& g = j["generator"];
            cfg_detail::reject_unknown(
                g, {"kind", "alpha", "gamma_u", "c0", "cy", "cz2", "beta", "B"}, "$.generator",
                bad);
            c.generator_kind = g.value("kind", "exponential");
            c.gen_alpha = cfg_detail::num(g, "alpha", 1.0);
            c.gen_gamma_u = cfg_detail::num(g, "gamma_u", 0.5);
            c.gen_c0 = cfg_detail::num(g, "c0", 0.0);
            c.gen_cy = cfg_detail::num(g, "cy", 0.0);
            c.gen_cz2 = cfg_detail::num(g, "cz2", 0.0);
            c.solve_beta = cfg_detail::num(g, "beta", 0.0);
            c.solve_terminal =
                parse_terminal(g.contains("B") ? g["B"] : json(), "$.generator.B", bad);
            if (c.generator_kind != "exponential" && c.generator_kind != "power" &&
                c.generator_kind != "log" && c.generator_kind != "custom")
                throw ConfigError("unknown generator kind", {"$.generator.kind"});
            if (c.generator_kind == "exponential" && !(c.gen_alpha > 0.0))
                throw ConfigError("generator.alpha must be > 0", {"$.generator.alpha"});
        } else {
            c.solve_terminal = Terminal::zero(c.model.d);
        }

        // ---- numerics
        if (j.contains("numerics")) {
            const json& n = j["numerics"];
            cfg_detail::reject_unknown(n,
                                       {"backend", "n_steps", "n_paths", "seed", "picard_tol",
                                        "picard_max_iters", "basis_degree"},
                                       "$.numerics", bad);
            const std::string backend = n.value("backend", "lattice");
            if (backend == "lattice")
                c.backend = Backend::Lattice;
            else if (backend == "regression")
                c.backend = Backend::Regression;
            else
                throw ConfigError("numerics.backend must be lattice|regression",
                                  {"$.numerics.backend"});
            c.n_steps = static_cast<int>(cfg_detail::num(n, "n_steps", 400));
            c.n_paths = static_cast<int>(cfg_detail::num(n, "n_paths", 100000));
            c.seed = static_cast<std::uint64_t>(cfg_detail::num(n, "seed", 1));
            c.picard.tol = cfg_detail::num(n, "picard_tol", 1e-12);
            c.picard.max_iters = static_cast<int>(cfg_detail::num(n, "picard_max_iters", 200));
            c.basis_degree = static_cast<int>(cfg_detail::num(n, "basis_degree", 4));
            if (c.n_steps < 1) throw ConfigError("n_steps must be >= 1", {"$.numerics.n_steps"});
        }

        // ---- verify
        if (j.contains("verify")) {
            const json& v = j["verify"];
            cfg_detail::reject_unknown(v, {"theorems", "tolerance_lattice"}, "$.verify", bad);
            if (v.contains("theorems"))
                for (const auto& t : v["theorems"]) c.theorems.push_back(t.get<std::string>());
            c.tolerance_lattice = cfg_detail::num(v, "tolerance_lattice", 1e-9);
        }

        // ---- ladder
        if (j.contains("ladder")) {
            const json& l = j["ladder"];
            cfg_detail::reject_unknown(l, {"n_list", "v_max", "grid_points"}, "$.ladder", bad);
            if (l.contains("n_list")) {
                c.n_list.clear();
                for (const auto& n : l["n_list"]) c.n_list.push_back(n.get<int>());
                if (!std::is_sorted(c.n_list.begin(), c.n_list.end()) || c.n_list.empty())
                    throw ConfigError("ladder.n_list must be increasing", {"$.ladder.n_list"});
            }
            c.ladder_v_max = cfg_detail::num(l, "v_max", 0.0);
            c.ladder_grid_points = static_cast<int>(cfg_detail::num(l, "grid_points", 101));
        }

        // ---- output
        if (j.contains("output")) {
            const json& o = j["output"];
            cfg_detail::reject_unknown(o, {"directory", "formats"}, "$.output", bad);
            c.output_directory = o.value("directory", std::string("out"));
            if (o.contains("formats")) {
                c.formats.clear();
                for (const auto& f : o["formats"]) c.formats.push_back(f.get<std::string>());
            }
        }

        if (!bad.empty()) throw ConfigError("unknown or invalid config keys", bad);

        c.resolved = resolve_echo(c, j);
        return c;
    }

private:
    static json resolve_echo(const ExperimentConfig& c, const json& original) {
        json r = original;
        r["command"] = c.command;
        r["numerics"]["backend"] = c.backend == Backend::Lattice ? "lattice" : "regression";
        r["numerics"]["n_steps"] = c.n_steps;
        r["numerics"]["n_paths"] = c.n_paths;
        r["numerics"]["seed"] = c.seed;
        r["numerics"]["picard_tol"] = c.picard.tol;
        r["numerics"]["picard_max_iters"] = c.picard.max_iters;
        r["numerics"]["basis_degree"] = c.basis_degree;
        r["model"]["a_lambda"] = c.model.a_lambda;
        r["output"]["directory"] = c.output_directory;
        r["output"]["formats"] = c.formats;
        return r;
    }
};

}  // namespace qbsde
