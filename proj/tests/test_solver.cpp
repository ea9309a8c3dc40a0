#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>

#include "qbsde/instances.hpp"
#include "qbsde/solver.hpp"
#include "qbsde/verify.hpp"

using namespace qbsde;

TEST_CASE("lattice reproduces the trivial closed forms") {
    const auto model = MarketModel::constant1d(1.0, 0.0, 1.0);
    SECTION("zero driver propagates the constant terminal") {
        auto p = BSDEProblem::eq1(make_custom_generator(model, 0.0, 0.0, 0.0), 0.0,
                                  Terminal::constant(0.7), 64);
        const auto sol = solve_lattice(p);
        for (const auto& row : sol.Y)
            for (double y : row) REQUIRE(y == Catch::Approx(0.7).margin(1e-13));
        for (const auto& row : sol.Z)
            for (double z : row) REQUIRE(z == 0.0);
    }
    SECTION("constant driver integrates deterministically") {
        const double kappa = 0.35, b = 0.2;
        auto p = BSDEProblem::eq1(make_custom_generator(model, kappa, 0.0, 0.0), 0.0,
                                  Terminal::constant(b), 128);
        const auto sol = solve_lattice(p);
        for (std::size_t i = 0; i < sol.Y.size(); ++i) {
            const double want = b + kappa * (1.0 - sol.times[i]);
            for (double y : sol.Y[i]) REQUIRE(y == Catch::Approx(want).margin(1e-11));
        }
    }
    SECTION("unconstrained exponential instance is deterministic") {
        const auto m2 = MarketModel::constant1d(1.2, 0.5, 1.0);
        const double alpha = 1.4;
        auto p = BSDEProblem::eq1(
            make_exponential_generator(m2, ConstraintSet::full_space(1), alpha), alpha,
            Terminal::zero(1), 200);
        const auto sol = solve_lattice(p);
        const double ml2 = 1.2 * 1.2 * 0.5 * 0.5;
        for (std::size_t i = 0; i < sol.Y.size(); ++i) {
            const double want = -ml2 / (2.0 * alpha) * (1.0 - sol.times[i]);
            for (double y : sol.Y[i]) REQUIRE(y == Catch::Approx(want).margin(1e-10));
        }
    }
}

namespace {

/// Independent oracle for the purely quadratic driver: the exponential
/// transform turns BSDE((q/2)|m z|^2, B) into a driftless equation, so
/// Y_0 = ln E[exp(q B(W_T))] / q, evaluated by Gauss-Hermite quadrature.
double quadratic_driver_oracle(double q, double m, double T, const Terminal& B) {
    (void)m;
    const double e = expectation_of_terminal(
        [&](double w) { return std::exp(q * B(w)); }, T);
    return std::log(e) / q;
}

Terminal clipped(double scale, double clip) {
    return Terminal::of(
        [scale, clip](const Vec& w) { return std::clamp(scale * w(0), -clip, clip); }, clip);
}

}  // namespace

TEST_CASE("lattice matches the quadrature oracle for the quadratic driver") {
    const double q = 1.0;
    const auto model = MarketModel::constant1d(1.0, 0.0, 1.0);
    const Terminal B = Terminal::of([](const Vec& w) { return 0.8 * std::tanh(w(0)); }, 0.8);
    const double exact = quadratic_driver_oracle(q, 1.0, 1.0, B);

    auto p = BSDEProblem::eq1(make_custom_generator(model, 0.0, 0.0, q), q, B, 400);
    const auto sol = solve_lattice(p);
    REQUIRE(sol.y0 == Catch::Approx(exact).margin(2e-4));

    SECTION("error halves within 20% when N doubles") {
        std::vector<double> errs;
        for (int N : {100, 200, 400}) {
            auto pn = BSDEProblem::eq1(make_custom_generator(model, 0.0, 0.0, q), q, B, N);
            errs.push_back(std::abs(solve_lattice(pn).y0 - exact));
        }
        const double r1 = errs[0] / errs[1];
        const double r2 = errs[1] / errs[2];
        REQUIRE(r1 > 1.6);
        REQUIRE(r1 < 2.4);
        REQUIRE(r2 > 1.6);
        REQUIRE(r2 < 2.4);
    }
    SECTION("a kinked terminal still lands near the oracle") {
        const Terminal Bk = clipped(1.0, 1.0);
        auto pk = BSDEProblem::eq1(make_custom_generator(model, 0.0, 0.0, q), q, Bk, 400);
        REQUIRE(solve_lattice(pk).y0 ==
                Catch::Approx(quadratic_driver_oracle(q, 1.0, 1.0, Bk)).margin(5e-3));
    }
}

TEST_CASE("picard fixed point") {
    PicardOptions opts;
    SECTION("y-independent drivers converge immediately") {
        const auto r = picard_step([](double) { return 2.0; }, 1.0, 0.01, opts, 1.0);
        REQUIRE(r.converged);
        REQUIRE(r.y == Catch::Approx(1.02));
        REQUIRE(r.iters <= 2);
    }
    SECTION("linear fixed point") {
        const auto r = picard_step([](double y) { return -y; }, 1.0, 0.01, opts, 1.0);
        REQUIRE(r.converged);
        REQUIRE(r.y == Catch::Approx(1.0 / 1.01).epsilon(1e-12));
    }
    SECTION("divergent case hits the iteration cap") {
        const auto r = picard_step([](double y) { return y * y; }, 4.0, 10.0, opts, 4.0);
        REQUIRE_FALSE(r.converged);
    }
}

TEST_CASE("terminal consistency and the a priori box") {
    for (auto& inst : reference_instances(100)) {
        DYNAMIC_SECTION(inst.name) {
            const auto sol = solve_lattice(inst.problem);
            const int N = inst.problem.n_steps;
            const auto& B = inst.problem.terminal_fn();
            for (int j = 0; j <= N; ++j)
                REQUIRE(sol.Y[N][j] == B((2.0 * j - N) * sol.sqrt_dt));
            REQUIRE(sol.diag.bound_violations == 0);
        }
    }
}

TEST_CASE("scheme-level comparison") {
    const auto model = MarketModel::constant1d(1.0, 0.4, 1.0);
    const Terminal B = clipped(0.5, 0.5);
    SECTION("larger terminal dominates") {
        auto F = make_exponential_generator(model, ConstraintSet::box(v1(-1.0), v1(1.0)), 1.0);
        auto p1 = BSDEProblem::eq1(F, 1.0, B, 100);
        auto p2 = BSDEProblem::eq1(
            F, 1.0, Terminal::of([B](const Vec& w) { return B.fn(w) + 1.0; }, B.sup_norm + 1.0),
            100);
        const auto s1 = solve_lattice(p1);
        const auto s2 = solve_lattice(p2);
        for (std::size_t i = 0; i < s1.Y.size(); ++i)
            for (std::size_t j = 0; j < s1.Y[i].size(); ++j)
                REQUIRE(s1.Y[i][j] <= s2.Y[i][j] + 1e-12);
    }
    SECTION("driver bump produces the deterministic gap") {
        const double kappa = 0.3;
        auto p1 = BSDEProblem::eq1(make_custom_generator(model, 0.1, 0.0, 0.4), 0.0, B, 100);
        auto p2 =
            BSDEProblem::eq1(make_custom_generator(model, 0.1 + kappa, 0.0, 0.4), 0.0, B, 100);
        const auto s1 = solve_lattice(p1);
        const auto s2 = solve_lattice(p2);
        for (std::size_t i = 0; i < s1.Y.size(); ++i) {
            const double want = kappa * (1.0 - s1.times[i]);
            for (std::size_t j = 0; j < s1.Y[i].size(); ++j)
                REQUIRE(s2.Y[i][j] - s1.Y[i][j] == Catch::Approx(want).margin(1e-9));
        }
    }
}

TEST_CASE("regression backend") {
    SECTION("constant terminal is reproduced to regression precision") {
        const auto model = MarketModel::constant1d(1.0, 0.0, 1.0);
        auto p = BSDEProblem::eq1(make_custom_generator(model, 0.0, 0.0, 0.0), 0.0,
                                  Terminal::constant(0.4), 8, Backend::Regression);
        p.regression.n_paths = 2000;
        const auto sol = solve_regression(p);
        REQUIRE(sol.y0 == Catch::Approx(0.4).margin(1e-10));
        for (int p2 = 0; p2 < sol.n_paths_stored; ++p2)
            REQUIRE(sol.path_Y[0][p2] == Catch::Approx(0.4).margin(1e-10));
    }
    SECTION("agrees with the lattice in d = 1") {
        const auto model = MarketModel::constant1d(1.0, 0.4, 1.0);
        auto F = make_exponential_generator(model, ConstraintSet::box(v1(-1.0), v1(1.0)), 1.0);
        auto pl = BSDEProblem::eq1(F, 1.0, clipped(0.5, 0.5), 50);
        auto pr = pl;
        pr.backend = Backend::Regression;
        pr.regression.n_paths = 20000;
        pr.regression.seed = 4;
        const double yl = solve_lattice(pl).y0;
        const double yr = solve_regression(pr).y0;
        // 3 sigma Monte Carlo band plus O(dt) scheme difference
        REQUIRE(std::abs(yl - yr) < 0.02);
    }
    SECTION("d = 2 log-utility value is deterministic") {
        Mat m(2, 2);
        m << 1.0, 0.2, 0.0, 0.9;
        Vec lam(2);
        lam << 0.5, -0.3;
        const auto model = MarketModel::constant(m, lam, 1.0);
        const auto set = ConstraintSet::full_space(2);
        auto p = build_utility_bsde(UtilitySpec::log_utility(1.0), model, set, 16,
                                    Backend::Regression);
        p.regression.n_paths = 4000;
        const auto sol = solve_regression(p);
        const double want = 0.5 * (m * lam).squaredNorm() * 1.0;
        REQUIRE(sol.y0 == Catch::Approx(want).margin(1e-9));
    }
    SECTION("path floor is enforced") {
        const auto model = MarketModel::constant1d(1.0, 0.0, 1.0);
        auto p = BSDEProblem::eq1(make_custom_generator(model, 0.0, 0.0, 0.0), 0.0,
                                  Terminal::constant(0.4), 8, Backend::Regression);
        p.regression.n_paths = 10;
        REQUIRE_THROWS_AS(solve_regression(p), std::invalid_argument);
    }
}

TEST_CASE("energy estimate") {
    SECTION("deterministic solutions carry zero energy") {
        const auto model = MarketModel::constant1d(1.0, 0.3, 1.0);
        auto p = BSDEProblem::eq1(
            make_exponential_generator(model, ConstraintSet::full_space(1), 1.0), 1.0,
            Terminal::zero(1), 64);
        const auto sol = solve_lattice(p);
        REQUIRE(energy_estimate(sol) == 0.0);
    }
    SECTION("quadratic instance stays within the certificate constant") {
        const auto model = MarketModel::constant1d(1.0, 0.0, 1.0);
        const double q = 0.8;
        auto p = BSDEProblem::eq1(make_custom_generator(model, 0.0, 0.0, q), q,
                                  clipped(1.0, 1.0), 200);
        const auto sol = solve_lattice(p);
        const double cprime = energy_bound_constant(p.F.h1, 1.0);
        REQUIRE(sol.diag.energy_estimate > 0.0);
        REQUIRE(sol.diag.energy_estimate <= cprime);
    }
    SECTION("remaining energy shrinks toward the horizon") {
        const auto model = MarketModel::constant1d(1.0, 0.0, 1.0);
        auto p = BSDEProblem::eq1(make_custom_generator(model, 0.0, 0.0, 0.8), 0.8,
                                  clipped(1.0, 1.0), 64);
        const auto sol = solve_lattice(p);
        auto level_max = [&](int i) {
            double v = 0.0;
            for (double e : sol.energy[i]) v = std::max(v, e);
            return v;
        };
        for (int i = 40; i < 64; ++i) REQUIRE(level_max(i + 1) <= level_max(i) + 1e-15);
    }
}

TEST_CASE("regression is independent of the thread count") {
    const auto model = MarketModel::constant1d(1.0, 0.4, 1.0);
    auto F = make_exponential_generator(model, ConstraintSet::box(v1(-1.0), v1(1.0)), 1.0);
    auto p = BSDEProblem::eq1(F, 1.0, clipped(0.5, 0.5), 20, Backend::Regression);
    p.regression.n_paths = 5000;

    setenv("QBSDE_THREADS", "1", 1);
    const auto s1 = solve_regression(p);
    setenv("QBSDE_THREADS", "3", 1);
    const auto s3 = solve_regression(p);
    unsetenv("QBSDE_THREADS");

    REQUIRE(s1.y0 == s3.y0);
    REQUIRE(s1.path_Y == s3.path_Y);
    REQUIRE(s1.path_Z == s3.path_Z);
    REQUIRE(s1.diag.energy_estimate == s3.diag.energy_estimate);
}
