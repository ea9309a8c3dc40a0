#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "qbsde/runner.hpp"

using namespace qbsde;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("qbsde_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& j) {
    const fs::path p = dir / name;
    std::ofstream out(p);
    out << j.dump(2);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json maximize_config(const std::string& outdir) {
    json j;
    j["command"] = "maximize";
    j["model"] = {{"d", 1}, {"m", {{0.8}}}, {"lambda", {0.4}}, {"T", 1.0}};
    j["constraint"] = {{"kind", "full_space"}};
    j["utility"] = {{"kind", "log"}, {"x", 2.0}};
    j["numerics"] = {{"backend", "lattice"}, {"n_steps", 100}};
    j["output"] = {{"directory", outdir}};
    return j;
}

}  // namespace

TEST_CASE("validate accepts a good config and rejects bad ones") {
    const auto dir = temp_dir("validate");
    SECTION("good") {
        const auto p = write_config(dir, "good.json", maximize_config((dir / "out").string()));
        REQUIRE(validate(p.string()) == 0);
    }
    SECTION("negative risk aversion exits 2") {
        json j = maximize_config((dir / "out").string());
        j["utility"] = {{"kind", "exponential"}, {"alpha", -1.0}};
        const auto p = write_config(dir, "bad_alpha.json", j);
        REQUIRE(validate(p.string()) == 2);
        REQUIRE(run(p.string()) == 2);
    }
    SECTION("power utility rejects a liability") {
        json j = maximize_config((dir / "out").string());
        j["utility"] = {{"kind", "power"}, {"gamma_u", 0.5}, {"x", 1.0},
                        {"B", {{"kind", "constant"}, {"value", 0.3}}}};
        const auto p = write_config(dir, "bad_power_B.json", j);
        REQUIRE(validate(p.string()) == 2);
    }
    SECTION("unknown keys exit 2") {
        json j = maximize_config((dir / "out").string());
        j["numerics"]["n_stepz"] = 100;
        const auto p = write_config(dir, "unknown.json", j);
        REQUIRE(validate(p.string()) == 2);
    }
    SECTION("missing file exits 2") { REQUIRE(validate((dir / "nope.json").string()) == 2); }
}

TEST_CASE("maximize run writes the expected artifacts") {
    const auto dir = temp_dir("maxrun");
    const std::string outdir = (dir / "out").string();
    const auto p = write_config(dir, "cfg.json", maximize_config(outdir));
    REQUIRE(run(p.string()) == 0);

    const json results = json::parse(slurp(fs::path(outdir) / "results.json"));
    const double ml2 = 0.8 * 0.8 * 0.4 * 0.4;
    REQUIRE(results.at("V0").get<double>() ==
            Catch::Approx(std::log(2.0) + 0.5 * ml2).epsilon(1e-9));
    REQUIRE(results.contains("config_hash"));
    REQUIRE(results.at("Y0_closed_form").get<double>() == Catch::Approx(0.5 * ml2));

    const std::string csv = slurp(fs::path(outdir) / "solution.csv");
    REQUIRE(csv.rfind("# config_hash=", 0) == 0);
    REQUIRE(fs::exists(fs::path(outdir) / "strategy.csv"));
    REQUIRE(fs::exists(fs::path(outdir) / "config_resolved.json"));
}

TEST_CASE("solve run exposes bounds and diagnostics") {
    const auto dir = temp_dir("solverun");
    json j;
    j["command"] = "solve";
    j["model"] = {{"d", 1}, {"m", {{1.0}}}, {"lambda", {0.5}}, {"T", 1.0}};
    j["constraint"] = {{"kind", "box"}, {"lower", {-1.0}}, {"upper", {1.0}}};
    j["generator"] = {{"kind", "exponential"},
                      {"alpha", 1.0},
                      {"B", {{"kind", "clipped_linear"}, {"scale", 0.5}, {"clip", 0.5}}}};
    j["numerics"] = {{"n_steps", 100}};
    j["output"] = {{"directory", (dir / "out").string()}};
    const auto p = write_config(dir, "cfg.json", j);
    REQUIRE(run(p.string()) == 0);
    const json results = json::parse(slurp(dir / "out" / "results.json"));
    REQUIRE(results.contains("Y0"));
    REQUIRE(results.at("bounds").contains("c_high"));
    REQUIRE(results.at("diagnostics").at("bound_violations").get<long>() == 0);
}

TEST_CASE("converge table") {
    const auto dir = temp_dir("converge");
    SECTION("zero-driver table has a zero error column") {
        json j;
        j["command"] = "solve";
        j["model"] = {{"d", 1}, {"m", {{1.0}}}, {"lambda", {0.0}}, {"T", 1.0}};
        j["generator"] = {{"kind", "custom"}, {"c0", 0.0}, {"cy", 0.0}, {"cz2", 0.0},
                          {"B", {{"kind", "constant"}, {"value", 0.3}}}};
        j["output"] = {{"directory", (dir / "out").string()}};
        const auto p = write_config(dir, "cfg.json", j);
        REQUIRE(converge(p.string(), {25, 50, 100}) == 0);
        const std::string csv = slurp(dir / "out" / "convergence.csv");
        std::istringstream ss(csv);
        std::string line;
        std::getline(ss, line);  // hash
        std::getline(ss, line);  // header
        while (std::getline(ss, line)) {
            const auto c1 = line.find(',');
            const auto c2 = line.find(',', c1 + 1);
            const auto c3 = line.find(',', c2 + 1);
            const double err = std::stod(line.substr(c2 + 1, c3 - c2 - 1));
            REQUIRE(err == 0.0);
        }
    }
    SECTION("misordered N list exits 2") {
        const auto p = write_config(dir, "cfg2.json", maximize_config((dir / "out2").string()));
        REQUIRE(converge(p.string(), {100, 50}) == 2);
    }
    SECTION("closed-form error roughly halves") {
        json j = maximize_config((dir / "out3").string());
        j["utility"] = {{"kind", "exponential"}, {"alpha", 1.0},
                        {"B", {{"kind", "clipped_linear"}, {"scale", 0.5}, {"clip", 0.5}}},
                        {"x", 1.0}};
        const auto p = write_config(dir, "cfg3.json", j);
        REQUIRE(converge(p.string(), {50, 100, 200}) == 0);
    }
}

TEST_CASE("outputs are byte-identical across thread counts") {
    const auto dir = temp_dir("threads");
    json j;
    j["command"] = "solve";
    j["model"] = {{"d", 1}, {"m", {{1.0}}}, {"lambda", {0.4}}, {"T", 1.0}};
    j["constraint"] = {{"kind", "box"}, {"lower", {-1.0}}, {"upper", {1.0}}};
    j["generator"] = {{"kind", "exponential"}, {"alpha", 1.0},
                      {"B", {{"kind", "clipped_linear"}, {"scale", 0.5}, {"clip", 0.5}}}};
    j["numerics"] = {{"backend", "regression"}, {"n_steps", 16}, {"n_paths", 4000}, {"seed", 7}};
    j["output"] = {{"directory", (dir / "out").string()}};
    const auto p = write_config(dir, "cfg.json", j);

    auto run_with = [&](const char* threads) {
        setenv("QBSDE_THREADS", threads, 1);
        REQUIRE(run(p.string()) == 0);
        unsetenv("QBSDE_THREADS");
        return std::pair{slurp(dir / "out" / "solution.csv"),
                         slurp(dir / "out" / "results.json")};
    };
    const auto a = run_with("1");
    const auto b = run_with("2");
    const auto c = run_with("8");
    REQUIRE(a.first == b.first);
    REQUIRE(b.first == c.first);
    REQUIRE(a.second == b.second);
    REQUIRE(b.second == c.second);
}
