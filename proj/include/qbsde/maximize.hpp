#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qbsde/solver.hpp"

namespace qbsde {

enum class UtilityKind { Exponential, Power, Log };

/// Utility selection with liability B (exponential only; the positive-wealth
/// utilities carry no liability) and initial wealth x.
struct UtilitySpec {
    UtilityKind kind = UtilityKind::Exponential;
    double alpha = 1.0;    // exponential risk aversion
    double gamma_u = 0.5;  // power exponent in (0, 1)
    Terminal B;
    double x = 1.0;

    static UtilitySpec exponential(double alpha, Terminal B, double x) {
        if (!(alpha > 0.0)) throw std::invalid_argument("UtilitySpec: alpha must be > 0");
        UtilitySpec u;
        u.kind = UtilityKind::Exponential;
        u.alpha = alpha;
        u.B = std::move(B);
        u.x = x;
        return u;
    }
    static UtilitySpec power(double gamma_u, double x) {
        if (!(gamma_u > 0.0 && gamma_u < 1.0))
            throw std::invalid_argument("UtilitySpec: gamma_u must lie in (0, 1)");
        if (!(x > 0.0)) throw std::invalid_argument("UtilitySpec: power utility needs x > 0");
        UtilitySpec u;
        u.kind = UtilityKind::Power;
        u.gamma_u = gamma_u;
        u.B = Terminal::zero(1);
        u.x = x;
        return u;
    }
    static UtilitySpec log_utility(double x) {
        if (!(x > 0.0)) throw std::invalid_argument("UtilitySpec: log utility needs x > 0");
        UtilitySpec u;
        u.kind = UtilityKind::Log;
        u.B = Terminal::zero(1);
        u.x = x;
        return u;
    }
};

namespace detail {

inline GeneratorSpec negate_driver(const GeneratorSpec& g) {
    GeneratorSpec out = g;
    auto eval = g.eval;
    auto eval1 = g.eval1;
    out.eval = [eval](double s, const Vec& st, double y, const Vec& z) {
        return -eval(s, st, y, z);
    };
    if (eval1)
        out.eval1 = [eval1](double s, double w, double y, double z) {
            return -eval1(s, w, y, z);
        };
    return out;
}

}  // namespace detail

/// The BSDE whose solution composes into the value function:
/// exponential -> (F_alpha, alpha, B); power -> the f1 equation with zero
/// terminal; log -> the f2 equation with zero terminal. The power/log
/// equations integrate their driver with a minus sign, so the backward-step
/// driver is the negated generator.
inline BSDEProblem build_utility_bsde(const UtilitySpec& u, const MarketModel& model,
                                      const ConstraintSet& set, int n_steps,
                                      Backend backend = Backend::Lattice) {
    switch (u.kind) {
        case UtilityKind::Exponential: {
            GeneratorSpec F = make_exponential_generator(model, set, u.alpha);
            return BSDEProblem::eq1(std::move(F), u.alpha, u.B, n_steps, backend);
        }
        case UtilityKind::Power: {
            GeneratorSpec F = detail::negate_driver(make_power_generator(model, set, u.gamma_u));
            return BSDEProblem::eq1(std::move(F), 0.5, Terminal::zero(model.d), n_steps, backend);
        }
        case UtilityKind::Log: {
            GeneratorSpec F = detail::negate_driver(make_log_generator(model, set));
            return BSDEProblem::eq1(std::move(F), 0.0, Terminal::zero(model.d), n_steps, backend);
        }
    }
    throw std::logic_error("build_utility_bsde: unknown utility");
}

/// V composed from wealth x and the BSDE value y.
inline double compose_value(const UtilitySpec& u, double x, double y) {
    switch (u.kind) {
        case UtilityKind::Exponential: return -std::exp(-u.alpha * (x - y));
        case UtilityKind::Power:
            if (!(x > 0.0)) throw std::invalid_argument("compose_value: power needs x > 0");
            return std::pow(x, u.gamma_u) / u.gamma_u * std::exp(y);
        case UtilityKind::Log:
            if (!(x > 0.0)) throw std::invalid_argument("compose_value: log needs x > 0");
            return std::log(x) + y;
    }
    throw std::logic_error("compose_value: unknown utility");
}

struct ValueResult {
    double value = 0.0;
    double y0 = 0.0;
    DiscreteSolution sol;
};

/// Per-node value slice at a positive time (lattice solutions).
inline std::vector<double> value_function_nodes(const UtilitySpec& u,
                                                const DiscreteSolution& sol, int step,
                                                double x) {
    if (step < 0 || step >= static_cast<int>(sol.Y.size()))
        throw std::invalid_argument("value_function_nodes: step out of range");
    std::vector<double> out(sol.Y[step].size());
    for (std::size_t j = 0; j < out.size(); ++j)
        out[j] = compose_value(u, x, sol.Y[step][j]);
    return out;
}

inline ValueResult value_function(const UtilitySpec& u, const MarketModel& model,
                                  const ConstraintSet& set, int n_steps,
                                  Backend backend = Backend::Lattice,
                                  const PicardOptions& picard = {},
                                  const RegressionOptions& regression = {}) {
    BSDEProblem p = build_utility_bsde(u, model, set, n_steps, backend);
    p.picard = picard;
    p.regression = regression;
    ValueResult r;
    r.sol = solve(p);
    r.y0 = r.sol.y0;
    r.value = compose_value(u, u.x, r.y0);
    return r;
}

/// Projection target whose constrained minimizer is the optimal strategy.
inline double strategy_target1(const UtilitySpec& u, double z, double lambda) {
    switch (u.kind) {
        case UtilityKind::Exponential: return z + lambda / u.alpha;
        case UtilityKind::Power: return (z + lambda) / (1.0 - u.gamma_u);
        case UtilityKind::Log: return lambda;
    }
    return lambda;
}

struct AdmissibilityReport {
    long membership_failures = 0;
    double worst_membership_gap = 0.0;
    bool proxy_ok = true;  // the |m(nu - Z)| control used to certify admissibility
    double worst_proxy_slack = std::numeric_limits<double>::infinity();
};

/// Strategy values on the solution grid (lattice nodes, d = 1) plus the
/// admissibility certificate.
struct StrategyProcess {
    std::vector<std::vector<double>> values;  // [i][node]
    AdmissibilityReport admissibility;

    /// Strategy read at (step, Brownian state) with flat extrapolation.
    double at(const DiscreteSolution& sol, int i, double w) const {
        return sol.interp(values, std::min<int>(i, static_cast<int>(values.size()) - 1), w);
    }
};

inline StrategyProcess optimal_strategy(const UtilitySpec& u, const DiscreteSolution& sol,
                                        const MarketModel& model, const ConstraintSet& set) {
    if (sol.backend != Backend::Lattice || model.d != 1)
        throw std::invalid_argument("optimal_strategy: lattice d = 1 solutions only");
    StrategyProcess sp;
    const int N = sol.n_steps();
    sp.values.resize(N);
    for (int i = 0; i < N; ++i) {
        const double t = sol.times[i];
        sp.values[i].resize(i + 1);
        for (int j = 0; j <= i; ++j) {
            const double w = sol.node_state(i, j);
            const double lam = model.lambda1(t, w);
            const double m = model.m1(t, w);
            const double z = sol.Z[i][j];
            const double target = strategy_target1(u, z, lam);
            const double nu = set.project1(target);
            sp.values[i][j] = nu;

            Vec nv(1);
            nv(0) = nu;
            if (!set.contains(nv, 1e-12)) {
                ++sp.admissibility.membership_failures;
                sp.admissibility.worst_membership_gap =
                    std::max(sp.admissibility.worst_membership_gap, std::abs(nu - target));
            }
            // checkable admissibility proxy: |m(nu* - Z)| <= |m(Z + lambda/alpha)|
            // + |m lambda/alpha| for the exponential case, and for power/log the
            // primitive it derives from, |m(nu* - target)| <= |m target|
            // (0 is always a feasible candidate).
            double slack = 0.0;
            switch (u.kind) {
                case UtilityKind::Exponential:
                    slack = std::abs(m * (target - z)) + std::abs(m * lam / u.alpha) -
                            std::abs(m * (nu - z));
                    break;
                case UtilityKind::Power:
                case UtilityKind::Log:
                    slack = std::abs(m * target) - std::abs(m * (nu - target));
                    break;
            }
            sp.admissibility.worst_proxy_slack =
                std::min(sp.admissibility.worst_proxy_slack, slack);
            if (slack < -1e-9) sp.admissibility.proxy_ok = false;
        }
    }
    return sp;
}

/// Vector projection target for the general-d path strategies.
inline Vec strategy_target(const UtilitySpec& u, const Vec& z, const Vec& lambda) {
    switch (u.kind) {
        case UtilityKind::Exponential: return z + lambda / u.alpha;
        case UtilityKind::Power: return (z + lambda) / (1.0 - u.gamma_u);
        case UtilityKind::Log: return lambda;
    }
    return lambda;
}

/// Strategy values along the stored path subset of a regression solution
/// (constant-coefficient models; path states are not retained).
struct PathStrategy {
    std::vector<std::vector<double>> values;  // [i][p * d + k]
    AdmissibilityReport admissibility;
};

inline PathStrategy optimal_strategy_paths(const UtilitySpec& u, const DiscreteSolution& sol,
                                           const MarketModel& model, const ConstraintSet& set) {
    if (sol.backend != Backend::Regression)
        throw std::invalid_argument("optimal_strategy_paths: regression solutions only");
    if (!model.constant_coefficients)
        throw std::invalid_argument(
            "optimal_strategy_paths: needs constant coefficients (path states are not stored)");
    const int d = sol.d;
    const Mat& m = model.m0;
    const Vec& lam = model.lam0;
    const int N = sol.n_steps();
    PathStrategy ps;
    ps.values.assign(N, std::vector<double>(sol.path_Z[0].size(), 0.0));
    Vec z(d);
    for (int i = 0; i < N; ++i)
        for (int p = 0; p < sol.n_paths_stored; ++p) {
            for (int k = 0; k < d; ++k)
                z(k) = sol.path_Z[i][static_cast<std::size_t>(p) * d + k];
            const Vec target = strategy_target(u, z, lam);
            const Vec nu = set.project(target, m);
            for (int k = 0; k < d; ++k)
                ps.values[i][static_cast<std::size_t>(p) * d + k] = nu(k);
            if (!set.contains(nu, 1e-12)) ++ps.admissibility.membership_failures;
            const double slack =
                u.kind == UtilityKind::Exponential
                    ? (m * (target - z)).norm() + (m * lam).norm() / u.alpha -
                          (m * (nu - z)).norm()
                    : (m * target).norm() - (m * (nu - target)).norm();
            ps.admissibility.worst_proxy_slack =
                std::min(ps.admissibility.worst_proxy_slack, slack);
            if (slack < -1e-9) ps.admissibility.proxy_ok = false;
        }
    return ps;
}

/// Strategy as a field over (step, state); the simulation-side view.
using StrategyField = std::function<double(int step, double w)>;

inline StrategyField field_of(const StrategyProcess& sp, const DiscreteSolution& sol) {
    return [&sp, &sol](int i, double w) { return sp.at(sol, i, w); };
}

/// Wealth trajectories under a d = 1 strategy field. Exponential utility
/// uses arithmetic increments in the amount nu; power/log use the
/// multiplicative log-Euler step in the proportion rho, which keeps wealth
/// strictly positive by construction.
inline std::vector<std::vector<double>> simulate_wealth(const StrategyField& strategy,
                                                        const UtilitySpec& u,
                                                        const MarketModel& model,
                                                        const PathBundle& bundle, double x) {
    if (model.d != 1) throw std::invalid_argument("simulate_wealth: d = 1 only");
    const int N = bundle.n_steps;
    const int P = bundle.n_paths;
    const double dt = bundle.dt;
    std::vector<std::vector<double>> X(N + 1, std::vector<double>(P, 0.0));
    for (int p = 0; p < P; ++p) X[0][p] = x;

    parallel_for_chunks(static_cast<std::size_t>(P), 1024,
                        [&](std::size_t, std::size_t pb, std::size_t pe) {
                            for (std::size_t p = pb; p < pe; ++p) {
                                double w = 0.0;
                                double xp = x;
                                for (int i = 0; i < N; ++i) {
                                    const double t = i * dt;
                                    const double m = model.m1(t, w);
                                    const double lam = model.lambda1(t, w);
                                    const double dW = bundle.inc(static_cast<int>(p), i);
                                    const double nu = strategy(i, w);
                                    if (u.kind == UtilityKind::Exponential) {
                                        xp += nu * (m * dW + m * m * lam * dt);
                                    } else {
                                        xp *= std::exp(nu * m * m * lam * dt -
                                                       0.5 * nu * nu * m * m * dt + nu * m * dW);
                                    }
                                    w += dW;
                                    X[i + 1][p] = xp;
                                }
                            }
                        });
    return X;
}

/// StrategyProcess overload; bundle steps are mapped onto the solution grid
/// by time.
inline std::vector<std::vector<double>> simulate_wealth(const StrategyProcess& sp,
                                                        const DiscreteSolution& sol,
                                                        const UtilitySpec& u,
                                                        const MarketModel& model,
                                                        const PathBundle& bundle, double x) {
    const double dt_b = bundle.dt;
    const double dt_s = sol.dt;
    const int top = static_cast<int>(sp.values.size()) - 1;
    return simulate_wealth(
        [&sp, &sol, dt_b, dt_s, top](int i, double w) {
            const int li = std::min(static_cast<int>(i * dt_b / dt_s + 0.5), top);
            return sp.at(sol, li, w);
        },
        u, model, bundle, x);
}

// ---------------------------------------------------------------------------
// dynamic-programming certificate: the R process
// ---------------------------------------------------------------------------

struct RProcessTest {
    std::string strategy;
    int tau_step = 0;
    int sigma_step = 0;
    bool martingale = false;  // equality test (optimal) vs supermartingale direction
    double diff_mean = 0.0;   // mean of R_sigma - R_tau
    double band = 0.0;        // 3 sigma batch band
    bool pass = false;
};

struct RProcessReport {
    bool pass = true;
    double worst_slack = 0.0;
    std::vector<RProcessTest> tests;
};

struct RProcessOptions {
    int n_batches = 30;
    double band_sigmas = 3.0;
    double shift = 0.25;                                 // perturbation size
    std::vector<std::pair<double, double>> windows = {}; // (tau, sigma) fractions of T
};

namespace detail {

inline double r_value(const UtilitySpec& u, double x, double y) {
    switch (u.kind) {
        case UtilityKind::Exponential: return -std::exp(-u.alpha * (x - y));
        case UtilityKind::Power: return std::pow(x, u.gamma_u) / u.gamma_u * std::exp(y);
        case UtilityKind::Log: return std::log(x) + y;
    }
    return 0.0;
}

struct BatchStats {
    double mean = 0.0;
    double band = 0.0;
};

inline BatchStats batch_band(const std::vector<double>& v, int n_batches, double sigmas) {
    const int P = static_cast<int>(v.size());
    const int bs = std::max(P / n_batches, 1);
    std::vector<double> means;
    for (int b = 0; b * bs < P; ++b) {
        const int lo = b * bs;
        const int hi = std::min(P, lo + bs);
        double s = 0.0;
        for (int i = lo; i < hi; ++i) s += v[i];
        means.push_back(s / (hi - lo));
    }
    const int nb = static_cast<int>(means.size());
    double mu = 0.0;
    for (double m : means) mu += m;
    mu /= nb;
    double var = 0.0;
    for (double m : means) var += (m - mu) * (m - mu);
    var = nb > 1 ? var / (nb - 1) : 0.0;
    BatchStats out;
    out.mean = mu;
    out.band = sigmas * std::sqrt(var / nb);
    return out;
}

}  // namespace detail

/// Monte Carlo check that R is a martingale under the optimal strategy and
/// a supermartingale under each perturbed feasible strategy, over a grid of
/// (tau, sigma) windows. Perturbations are constant and first-half-bucket
/// shifts projected back into the constraint set.
inline RProcessReport verify_R_process(const UtilitySpec& u, const MarketModel& model,
                                       const ConstraintSet& set, const DiscreteSolution& sol,
                                       const PathBundle& bundle,
                                       const RProcessOptions& opts = {}) {
    const int N = bundle.n_steps;
    const double dt = bundle.dt;
    const StrategyProcess sp_opt = optimal_strategy(u, sol, model, set);
    const int lattice_N = sol.n_steps();
    const double lattice_dt = sol.dt;

    auto windows = opts.windows;
    if (windows.empty()) windows = {{0.0, 1.0}, {0.0, 0.5}, {0.5, 1.0}};

    // strategy fields: optimal + projected perturbations
    struct Named {
        std::string name;
        StrategyField field;
        bool martingale;
    };
    std::vector<Named> fields;
    auto opt_at = [&](int i, double w) {
        const double t = i * dt;
        const int li = std::min(static_cast<int>(t / lattice_dt + 0.5), lattice_N - 1);
        return sp_opt.at(sol, li, w);
    };
    fields.push_back({"optimal", opt_at, true});
    for (double dir : {+1.0, -1.0}) {
        const double h = dir * opts.shift;
        fields.push_back({h > 0 ? "shift+" : "shift-",
                          [&, h](int i, double w) { return set.project1(opt_at(i, w) + h); },
                          false});
        fields.push_back({h > 0 ? "bucket+" : "bucket-",
                          [&, h](int i, double w) {
                              const double t = i * dt;
                              const double s = t < 0.5 * model.horizon ? h : 0.0;
                              return set.project1(opt_at(i, w) + s);
                          },
                          false});
    }

    RProcessReport rep;
    rep.worst_slack = std::numeric_limits<double>::infinity();
    std::vector<double> diff(bundle.n_paths);
    for (const auto& f : fields) {
        const auto X = simulate_wealth(f.field, u, model, bundle, u.x);
        for (const auto& [ft, fs] : windows) {
            const int itau = std::min(static_cast<int>(ft * N + 0.5), N);
            const int isig = std::min(static_cast<int>(fs * N + 0.5), N);
            if (itau >= isig) continue;
            for (int p = 0; p < bundle.n_paths; ++p) {
                double wtau = 0.0, wsig = 0.0;
                for (int i = 0; i < itau; ++i) wtau += bundle.inc(p, i);
                wsig = wtau;
                for (int i = itau; i < isig; ++i) wsig += bundle.inc(p, i);
                const int ltau = std::min(static_cast<int>(itau * dt / lattice_dt + 0.5), lattice_N);
                const int lsig = std::min(static_cast<int>(isig * dt / lattice_dt + 0.5), lattice_N);
                const double ytau = sol.y_at(ltau, wtau);
                const double ysig = sol.y_at(lsig, wsig);
                diff[p] = detail::r_value(u, X[isig][p], ysig) -
                          detail::r_value(u, X[itau][p], ytau);
            }
            const auto bs = detail::batch_band(diff, opts.n_batches, opts.band_sigmas);
            RProcessTest t;
            t.strategy = f.name;
            t.tau_step = itau;
            t.sigma_step = isig;
            t.martingale = f.martingale;
            t.diff_mean = bs.mean;
            t.band = bs.band;
            const double slack =
                f.martingale ? bs.band - std::abs(bs.mean) : bs.band - bs.mean;
            t.pass = slack >= 0.0;
            rep.worst_slack = std::min(rep.worst_slack, slack);
            rep.pass = rep.pass && t.pass;
            rep.tests.push_back(t);
        }
    }
    return rep;
}

}  // namespace qbsde
