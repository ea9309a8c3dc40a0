#pragma once

#include <string>
#include <vector>

#include "qbsde/maximize.hpp"
#include "qbsde/solver.hpp"

namespace qbsde {

/// Named, fully specified d = 1 lattice problem for the theorem harness.
struct RefInstance {
    std::string name;
    BSDEProblem problem;
};

inline Vec v1(double x) {
    Vec v(1);
    v(0) = x;
    return v;
}

inline Terminal clipped_linear_terminal(double scale, double clip) {
    return Terminal::of(
        [scale, clip](const Vec& w) { return std::clamp(scale * w(0), -clip, clip); }, clip);
}

/// The reference instance set: every built-in driver family, every
/// constraint kind, liabilities both zero and state-dependent. All carry
/// valid H1 certificates (so the a priori box applies) and H2 certificates
/// (so the uniqueness check applies).
inline std::vector<RefInstance> reference_instances(int n_steps = 400) {
    std::vector<RefInstance> out;
    auto add = [&](std::string name, BSDEProblem p) {
        p.n_steps = n_steps;
        out.push_back({std::move(name), std::move(p)});
    };

    const auto B_clip = clipped_linear_terminal(0.5, 0.5);
    const auto B_zero = Terminal::zero(1);
    const auto B_const = Terminal::constant(0.3);

    // exponential family across constraint kinds
    {
        const auto model = MarketModel::constant1d(1.0, 0.5, 1.0);
        const auto full = ConstraintSet::full_space(1);
        const auto box = ConstraintSet::box(v1(-1.0), v1(1.0));
        const auto ball = ConstraintSet::ball(v1(0.0), 0.8);
        const auto finite = ConstraintSet::finite_set({v1(-1.0), v1(0.0), v1(2.0)});
        const auto uni = ConstraintSet::union_of(
            {ConstraintSet::box(v1(-0.8), v1(-0.4), false), ConstraintSet::box(v1(0.0), v1(1.0))});
        const auto half = ConstraintSet::halfspace(v1(1.0), 0.7);

        for (double alpha : {0.5, 1.0, 2.0}) {
            add("exp/full/a=" + std::to_string(alpha),
                BSDEProblem::eq1(make_exponential_generator(model, full, alpha), alpha, B_zero,
                                 n_steps));
            add("exp/box/a=" + std::to_string(alpha),
                BSDEProblem::eq1(make_exponential_generator(model, box, alpha), alpha, B_clip,
                                 n_steps));
        }
        add("exp/ball", BSDEProblem::eq1(make_exponential_generator(model, ball, 1.0), 1.0,
                                         B_const, n_steps));
        add("exp/finite", BSDEProblem::eq1(make_exponential_generator(model, finite, 1.0), 1.0,
                                           B_clip, n_steps));
        add("exp/union", BSDEProblem::eq1(make_exponential_generator(model, uni, 1.0), 1.0,
                                          B_const, n_steps));
        add("exp/halfspace", BSDEProblem::eq1(make_exponential_generator(model, half, 1.0), 1.0,
                                              B_clip, n_steps));
    }

    // varied market coefficients
    {
        const auto m2 = MarketModel::constant1d(1.3, 0.0, 0.5);
        add("exp/lambda0", BSDEProblem::eq1(
                               make_exponential_generator(m2, ConstraintSet::full_space(1), 1.0),
                               1.0, B_clip, n_steps));
        const auto m3 = MarketModel::constant1d(0.7, 0.9, 2.0);
        add("exp/longT",
            BSDEProblem::eq1(make_exponential_generator(m3, ConstraintSet::box(v1(-0.5), v1(0.5)),
                                                        1.5),
                             1.5, B_const, n_steps));
    }

    // power and log through the utility layer (negated-driver equations)
    {
        const auto model = MarketModel::constant1d(1.0, 0.4, 1.0);
        const auto full = ConstraintSet::full_space(1);
        const auto box = ConstraintSet::box(v1(-0.5), v1(0.8));
        for (double gu : {0.3, 0.7}) {
            add("power/full/g=" + std::to_string(gu),
                build_utility_bsde(UtilitySpec::power(gu, 1.0), model, full, n_steps));
            add("power/box/g=" + std::to_string(gu),
                build_utility_bsde(UtilitySpec::power(gu, 1.0), model, box, n_steps));
        }
        add("log/full", build_utility_bsde(UtilitySpec::log_utility(1.0), model, full, n_steps));
        add("log/ball", build_utility_bsde(UtilitySpec::log_utility(1.0), model,
                                           ConstraintSet::ball(v1(0.1), 0.6), n_steps));
    }

    // table-defined drivers
    {
        const auto model = MarketModel::constant1d(1.0, 0.0, 1.0);
        add("custom/constant",
            BSDEProblem::eq1(make_custom_generator(model, 0.4, 0.0, 0.0), 0.0, B_const, n_steps));
        add("custom/linear-y",
            BSDEProblem::eq1(make_custom_generator(model, 0.2, -0.5, 0.0), 0.0, B_clip, n_steps));
        add("custom/quadratic-z",
            BSDEProblem::eq1(make_custom_generator(model, 0.1, 0.0, 0.8), 0.0, B_clip, n_steps));
        add("custom/mixed",
            BSDEProblem::eq1(make_custom_generator(model, 0.1, 0.3, 0.5), 0.0, B_clip, n_steps));
        const auto model2 = MarketModel::constant1d(1.2, 0.3, 1.5);
        add("custom/mixed2",
            BSDEProblem::eq1(make_custom_generator(model2, -0.2, 0.25, 0.6), 0.0, B_const,
                             n_steps));
        add("custom/zero",
            BSDEProblem::eq1(make_custom_generator(model, 0.0, 0.0, 0.0), 0.0, B_const, n_steps));
    }
    return out;
}

/// Globally Lipschitz plain-form driver g(s, u, v) = c0 + mu1 u + mu2 (m v)
/// with declared constant max(|mu1|, |mu2|).
inline Eq2Problem make_linear_eq2(const MarketModel& model, double c0, double mu1, double mu2,
                                  Terminal terminal) {
    Eq2Problem p;
    p.name = "linear";
    p.model = model;
    p.g = [model, c0, mu1, mu2](double s, const Vec& state, double u, const Vec& v) {
        return c0 + mu1 * u + mu2 * (model.vol(s, state) * v)(0);
    };
    p.g1 = [model, c0, mu1, mu2](double s, double w, double u, double v) {
        return c0 + mu1 * u + mu2 * model.m1(s, w) * v;
    };
    p.terminal = std::move(terminal);
    p.lipschitz_n = static_cast<int>(std::ceil(std::max(std::abs(mu1), std::abs(mu2))));
    p.u_dependent = mu1 != 0.0;
    return p;
}

/// Quadratic plain-form driver g(v) = (q/2)|m v|^2, the canonical ladder
/// instance; carries the certificate that bounds U by its terminal.
inline Eq2Problem make_quadratic_eq2(const MarketModel& model, double q, Terminal terminal) {
    Eq2Problem p;
    p.name = "quadratic";
    p.model = model;
    p.g = [model, q](double s, const Vec& state, double, const Vec& v) {
        return 0.5 * q * (model.vol(s, state) * v).squaredNorm();
    };
    p.g1 = [model, q](double s, double w, double, double v) {
        const double m = model.m1(s, w);
        return 0.5 * q * m * m * v * v;
    };
    p.terminal = std::move(terminal);
    p.u_dependent = false;
    H1Certificate h1;
    h1.alpha_bar = [](double) { return 0.0; };
    h1.a = 0.0;
    h1.b = 0.0;
    h1.gamma = q;
    h1.beta = 0.0;
    h1.variant = H1Variant::H1Prime;
    p.h1 = h1;
    return p;
}

/// Canonical ladder instance: the purely quadratic driver with a steep
/// clipped-linear terminal on a short horizon. The slope 40 makes every
/// rung of the {2,...,32} ladder bind (nodal |V| reaches 40) while the
/// short horizon keeps the explicit scheme stable (slope x sqrt(dt) < 1).
inline Eq2Problem ladder_instance() {
    const auto model = MarketModel::constant1d(1.0, 0.0, 0.1);
    const Terminal B = Terminal::of(
        [](const Vec& w) { return std::clamp(40.0 * w(0), -12.0, 12.0); }, 12.0);
    return make_quadratic_eq2(model, 1.0, B);
}

inline InfConvGrid ladder_grid(double v_max = 64.0, int points = 513) {
    return InfConvGrid::v_axis1d(v_max, points);
}

/// Lipschitz instances for the quadratic-bound check: the two sanity cases
/// (zero driver and the linear ODE) plus a seeded linear family.
inline std::vector<RefInstance> prop2_instances(int n_steps = 200) {
    std::vector<RefInstance> out;
    const auto model = MarketModel::constant1d(1.0, 0.0, 1.0);
    auto add = [&](std::string name, Eq2Problem g) {
        out.push_back({std::move(name), BSDEProblem::eq2(std::move(g), n_steps)});
    };
    add("lipschitz/zero", make_linear_eq2(model, 0.0, 0.0, 0.0,
                                          clipped_linear_terminal(1.0, 1.0)));
    add("lipschitz/linear-ode", make_linear_eq2(model, 0.0, 1.0, 0.0, Terminal::constant(1.0)));
    std::uint64_t s = 20240811ULL;
    for (int k = 0; k < 8; ++k) {
        const double c0 = -0.5 + static_cast<double>(splitmix64(s) % 1000) / 1000.0;
        const double mu1 = -1.0 + static_cast<double>(splitmix64(s) % 2000) / 1000.0;
        const double mu2 = -1.0 + static_cast<double>(splitmix64(s) % 2000) / 1000.0;
        const double clip = 0.5 + static_cast<double>(splitmix64(s) % 1000) / 1000.0;
        add("lipschitz/random-" + std::to_string(k),
            make_linear_eq2(model, c0, mu1, mu2, clipped_linear_terminal(1.0, clip)));
    }
    return out;
}

/// Ordered problem pairs (terminal bumps, driver bumps, nested constraint
/// sets) for the comparison check.
inline std::vector<std::pair<RefInstance, RefInstance>> comparison_pairs(int n_steps = 200) {
    std::vector<std::pair<RefInstance, RefInstance>> out;
    const auto model = MarketModel::constant1d(1.0, 0.5, 1.0);
    const auto B = clipped_linear_terminal(0.5, 0.5);

    {  // terminal bump
        auto F = make_exponential_generator(model, ConstraintSet::box(v1(-1.0), v1(1.0)), 1.0);
        auto bumped = Terminal::of([B](const Vec& w) { return B.fn(w) + 0.4; }, B.sup_norm + 0.4);
        out.push_back({{"exp/box", BSDEProblem::eq1(F, 1.0, B, n_steps)},
                       {"exp/box+bump", BSDEProblem::eq1(F, 1.0, bumped, n_steps)}});
    }
    {  // driver bump
        auto F1 = make_custom_generator(model, 0.1, 0.0, 0.5);
        auto F2 = make_custom_generator(model, 0.4, 0.0, 0.5);
        out.push_back({{"custom", BSDEProblem::eq1(F1, 0.0, B, n_steps)},
                       {"custom+kappa", BSDEProblem::eq1(F2, 0.0, B, n_steps)}});
    }
    {  // nested sets: enlarging the feasible set lowers the infimum
        auto Fbig = make_exponential_generator(model, ConstraintSet::box(v1(-1.0), v1(1.0)), 1.0);
        auto Fsmall =
            make_exponential_generator(model, ConstraintSet::box(v1(-0.3), v1(0.3)), 1.0);
        out.push_back({{"exp/bigset", BSDEProblem::eq1(Fbig, 1.0, B, n_steps)},
                       {"exp/smallset", BSDEProblem::eq1(Fsmall, 1.0, B, n_steps)}});
    }
    return out;
}

}  // namespace qbsde
