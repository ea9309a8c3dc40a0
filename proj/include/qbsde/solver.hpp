#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbsde/parallel.hpp"
#include "qbsde/transform.hpp"

namespace qbsde {

struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Backend { Lattice, Regression };

struct PicardOptions {
    double tol = 1e-12;
    int max_iters = 200;
};

/// Starting point of the inner fixed-point iteration; multi-start agreement
/// is the uniqueness-in-practice check.
enum class PicardInit { Propagated, Zero, LowerBound, UpperBound };

struct RegressionOptions {
    int n_paths = 100000;
    int basis_degree = 4;
    std::uint64_t seed = 1;
    int keep_paths = 512;  // per-path storage cap for exports
};

/// Discretized BSDE of either form. Eq1 carries (F, beta, B); the beta
/// quadratic-variation term is inert here (orthogonal part identically zero
/// under the Brownian filtration) and is carried analytically by the
/// transform layer. Eq2 carries (g, terminal) directly.
struct BSDEProblem {
    enum class Form { Eq1, Eq2 };
    Form form = Form::Eq1;

    GeneratorSpec F;             // Eq1
    double beta = 0.0;           // Eq1
    Terminal terminal;           // Eq1: B
    std::optional<Eq2Problem> g; // Eq2 (terminal lives inside)

    int n_steps = 400;
    Backend backend = Backend::Lattice;
    PicardOptions picard;
    RegressionOptions regression;

    static BSDEProblem eq1(GeneratorSpec F, double beta, Terminal B, int n_steps,
                           Backend backend = Backend::Lattice) {
        BSDEProblem p;
        p.form = Form::Eq1;
        p.F = std::move(F);
        p.beta = beta;
        p.terminal = std::move(B);
        p.n_steps = n_steps;
        p.backend = backend;
        return p;
    }

    static BSDEProblem eq2(Eq2Problem g2, int n_steps, Backend backend = Backend::Lattice) {
        BSDEProblem p;
        p.form = Form::Eq2;
        p.g = std::move(g2);
        p.n_steps = n_steps;
        p.backend = backend;
        return p;
    }

    const MarketModel& model() const { return form == Form::Eq1 ? F.model : g->model; }
    const Terminal& terminal_fn() const { return form == Form::Eq1 ? terminal : g->terminal; }

    std::optional<H1Certificate> certificate() const {
        if (form == Form::Eq1) return F.h1.alpha_bar ? std::optional(F.h1) : std::nullopt;
        return g->h1;
    }
    std::optional<H2Certificate> h2_certificate() const {
        if (form == Form::Eq1) return F.h2;
        return std::nullopt;
    }

    /// Unified scalar driver for the d = 1 backends.
    double step1(double s, double w, double y, double z) const {
        return form == Form::Eq1 ? F.eval1(s, w, y, z) : g->g1(s, w, y, z);
    }
    double step(double s, const Vec& state, double y, const Vec& z) const {
        return form == Form::Eq1 ? F.eval(s, state, y, z) : g->g(s, state, y, z);
    }
};

struct Diagnostics {
    int picard_iters_max = 0;
    long bound_violations = 0;
    long z_clamps = 0;
    double energy_estimate = 0.0;
};

/// Backward solution on the time grid. Lattice storage is triangular
/// (level i has i + 1 nodes, node j at Brownian state (2j - i) sqrt(dt));
/// regression storage keeps a capped path subset plus the t = 0 values.
struct DiscreteSolution {
    Backend backend = Backend::Lattice;
    std::vector<double> times;
    double dt = 0.0;
    double sqrt_dt = 0.0;

    // lattice
    std::vector<std::vector<double>> Y;       // [i][j]
    std::vector<std::vector<double>> Z;       // [i][j], zero at i = N
    std::vector<std::vector<double>> energy;  // conditional remaining int |mZ|^2 dC

    // regression
    double y0 = 0.0;
    Vec z0;
    std::vector<std::vector<double>> path_Y;  // [i][p], p < n_paths_stored
    std::vector<std::vector<double>> path_Z;  // [i][p * d + k]
    int n_paths_stored = 0;
    int d = 1;

    double y_min = std::numeric_limits<double>::infinity();
    double y_max = -std::numeric_limits<double>::infinity();
    std::optional<AprioriBounds> box;
    Diagnostics diag;

    int n_steps() const { return static_cast<int>(times.size()) - 1; }
    double node_state(int i, int j) const { return (2.0 * j - i) * sqrt_dt; }

    /// Piecewise-linear read of the level-i lattice slice at Brownian state
    /// w, flat beyond the extreme nodes.
    double interp(const std::vector<std::vector<double>>& A, int i, double w) const {
        const auto& row = A[i];
        if (i == 0 || row.size() == 1) return row[0];
        const double lo = -static_cast<double>(i) * sqrt_dt;
        const double x = (w - lo) / (2.0 * sqrt_dt);
        if (x <= 0.0) return row.front();
        if (x >= i) return row.back();
        const int j = static_cast<int>(x);
        const double f = x - j;
        return row[j] + f * (row[j + 1] - row[j]);
    }
    double y_at(int i, double w) const { return interp(Y, i, w); }
    double z_at(int i, double w) const { return interp(Z, i, w); }
};

struct PicardResult {
    double y = 0.0;
    int iters = 0;
    bool converged = false;
};

/// Solves y = y_next_expectation + f(y) dt by damped fixed-point iteration.
/// The damping halves whenever the residual grows; the fixed point itself
/// is unaffected by damping.
template <typename F1>
inline PicardResult picard_step(F1&& f, double y_next_expectation, double dt,
                                const PicardOptions& opts, double y_init) {
    double y = y_init;
    double omega = 1.0;
    double prev_res = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= opts.max_iters; ++it) {
        const double target = y_next_expectation + f(y) * dt;
        const double res = std::abs(target - y);
        if (!std::isfinite(res)) return {y, it, false};
        if (res <= opts.tol) return {target, it, true};
        if (res > prev_res) omega = std::max(omega * 0.5, 1.0 / 64.0);
        prev_res = res;
        y += omega * (target - y);
    }
    return {y, opts.max_iters, false};
}

namespace detail {

inline double picard_init_value(PicardInit init, double propagated,
                                const std::optional<AprioriBounds>& box) {
    switch (init) {
        case PicardInit::Propagated: return propagated;
        case PicardInit::Zero: return 0.0;
        case PicardInit::LowerBound: return box ? box->c_low : 0.0;
        case PicardInit::UpperBound: return box ? box->c_high : 0.0;
    }
    return propagated;
}

}  // namespace detail

/// Recombining binomial backward induction for d = 1. Z is explicit (from
/// the two children), y implicit via the damped Picard fixed point. Bound
/// violations are counted, never clamped; Z is clamped to the energy-implied
/// radius with every clamp counted in the diagnostics.
inline DiscreteSolution solve_lattice(const BSDEProblem& problem,
                                      PicardInit init = PicardInit::Propagated) {
    const MarketModel& model = problem.model();
    if (model.d != 1) throw std::invalid_argument("solve_lattice: requires d = 1");
    if (problem.n_steps < 1) throw std::invalid_argument("solve_lattice: n_steps must be >= 1");

    const int N = problem.n_steps;
    const double T = model.horizon;
    const double dt = T / N;
    const double sqdt = std::sqrt(dt);

    DiscreteSolution sol;
    sol.backend = Backend::Lattice;
    sol.dt = dt;
    sol.sqrt_dt = sqdt;
    sol.d = 1;
    sol.times.resize(N + 1);
    for (int i = 0; i <= N; ++i) sol.times[i] = i * dt;
    sol.Y.resize(N + 1);
    sol.Z.resize(N + 1);
    sol.energy.resize(N + 1);

    const auto cert = problem.certificate();
    double z_abs_max = std::numeric_limits<double>::infinity();
    if (cert) {
        const double b_sup = problem.terminal_fn().sup_norm;
        sol.box = apriori_bounds(*cert, b_sup);
        const double cprime = energy_bound_constant(*cert, b_sup);
        z_abs_max = std::sqrt(cprime / dt);  // bound on |m Z|
    }
    const double eps_box = 10.0 / N;

    const Terminal& B = problem.terminal_fn();
    sol.Y[N].resize(N + 1);
    sol.Z[N].assign(N + 1, 0.0);
    sol.energy[N].assign(N + 1, 0.0);
    for (int j = 0; j <= N; ++j) sol.Y[N][j] = B((2.0 * j - N) * sqdt);

    auto track = [&](double y) {
        sol.y_min = std::min(sol.y_min, y);
        sol.y_max = std::max(sol.y_max, y);
        if (sol.box && (y < sol.box->c_low - eps_box || y > sol.box->c_high + eps_box))
            ++sol.diag.bound_violations;
    };
    for (int j = 0; j <= N; ++j) track(sol.Y[N][j]);

    for (int i = N - 1; i >= 0; --i) {
        const double t = i * dt;
        sol.Y[i].resize(i + 1);
        sol.Z[i].resize(i + 1);
        sol.energy[i].resize(i + 1);
        for (int j = 0; j <= i; ++j) {
            const double w = (2.0 * j - i) * sqdt;
            const double up = sol.Y[i + 1][j + 1];
            const double dn = sol.Y[i + 1][j];
            const double e = 0.5 * (up + dn);
            const double m = model.m1(t, w);
            double z = (up - dn) / (2.0 * sqdt * m);
            if (std::abs(m * z) > z_abs_max) {
                z = std::copysign(z_abs_max / std::abs(m), z);
                ++sol.diag.z_clamps;
            }
            const double y_start = detail::picard_init_value(init, e, sol.box);
            const PicardResult pr = picard_step(
                [&](double y) { return problem.step1(t, w, y, z); }, e, dt, problem.picard,
                y_start);
            if (!pr.converged)
                throw SolverError("solve_lattice: Picard iteration did not converge at t = " +
                                  std::to_string(t) + " (step size too large for the driver)");
            sol.diag.picard_iters_max = std::max(sol.diag.picard_iters_max, pr.iters);
            sol.Y[i][j] = pr.y;
            sol.Z[i][j] = z;
            sol.energy[i][j] = 0.5 * (sol.energy[i + 1][j + 1] + sol.energy[i + 1][j]) +
                               (m * z) * (m * z) * dt;
            track(pr.y);
        }
    }
    sol.y0 = sol.Y[0][0];
    sol.z0 = Vec::Constant(1, sol.Z[0][0]);
    double emax = 0.0;
    for (const auto& row : sol.energy)
        for (double v : row) emax = std::max(emax, v);
    sol.diag.energy_estimate = emax;
    return sol;
}

namespace detail {

/// Exponent tuples of the monomial basis, total degree <= degree.
inline std::vector<std::vector<int>> monomial_exponents(int d, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(d, 0);
    const std::function<void(int, int)> rec = [&](int k, int remaining) {
        if (k == d) {
            out.push_back(cur);
            return;
        }
        for (int e = 0; e <= remaining; ++e) {
            cur[k] = e;
            rec(k + 1, remaining - e);
        }
        cur[k] = 0;
    };
    rec(0, degree);
    return out;
}

inline void fill_basis(const std::vector<std::vector<int>>& exps, const double* x, int d,
                       double scale, double* phi) {
    for (std::size_t b = 0; b < exps.size(); ++b) {
        double v = 1.0;
        for (int k = 0; k < d; ++k)
            for (int e = 0; e < exps[b][k]; ++e) v *= x[k] * scale;
        phi[b] = v;
    }
}

}  // namespace detail

/// Least-squares Monte Carlo backward recursion for d >= 1. Conditional
/// expectations are polynomial regressions on the Brownian state; the inner
/// y fixed point is the same Picard step as the lattice. Deterministic in
/// (seed, n_paths, n_steps) under any thread count: per-chunk Gram partials
/// are combined in chunk order.
inline DiscreteSolution solve_regression(const BSDEProblem& problem,
                                         PicardInit init = PicardInit::Propagated) {
    const MarketModel& model = problem.model();
    const int d = model.d;
    const int N = problem.n_steps;
    const int P = problem.regression.n_paths;
    if (P < 1000) throw std::invalid_argument("solve_regression: n_paths must be >= 1000");
    if (N < 1) throw std::invalid_argument("solve_regression: n_steps must be >= 1");

    const PathBundle bundle = simulate_paths(model, P, N, problem.regression.seed);
    const double dt = bundle.dt;

    DiscreteSolution sol;
    sol.backend = Backend::Regression;
    sol.dt = dt;
    sol.sqrt_dt = std::sqrt(dt);
    sol.d = d;
    sol.times.resize(N + 1);
    for (int i = 0; i <= N; ++i) sol.times[i] = i * dt;

    const auto cert = problem.certificate();
    double z_abs_max = std::numeric_limits<double>::infinity();
    if (cert) {
        sol.box = apriori_bounds(*cert, problem.terminal_fn().sup_norm);
        z_abs_max = std::sqrt(energy_bound_constant(*cert, problem.terminal_fn().sup_norm) / dt);
    }
    const double eps_box = 10.0 / N;

    const int keep = std::min(problem.regression.keep_paths, P);
    sol.n_paths_stored = keep;
    sol.path_Y.assign(N + 1, std::vector<double>(keep, 0.0));
    sol.path_Z.assign(N + 1, std::vector<double>(static_cast<std::size_t>(keep) * d, 0.0));

    // terminal states and values
    std::vector<double> state(static_cast<std::size_t>(P) * d, 0.0);
    for (int p = 0; p < P; ++p)
        for (int i = 0; i < N; ++i)
            for (int k = 0; k < d; ++k)
                state[static_cast<std::size_t>(p) * d + k] += bundle.inc(p, i, k);

    const Terminal& B = problem.terminal_fn();
    std::vector<double> Ynext(P);
    {
        Vec w(d);
        for (int p = 0; p < P; ++p) {
            for (int k = 0; k < d; ++k) w(k) = state[static_cast<std::size_t>(p) * d + k];
            Ynext[p] = B.fn(w);
        }
    }
    auto track = [&](double y) {
        sol.y_min = std::min(sol.y_min, y);
        sol.y_max = std::max(sol.y_max, y);
        if (sol.box && (y < sol.box->c_low - eps_box || y > sol.box->c_high + eps_box))
            ++sol.diag.bound_violations;
    };
    for (int p = 0; p < P; ++p) track(Ynext[p]);
    for (int p = 0; p < keep; ++p) sol.path_Y[N][p] = Ynext[p];

    const auto exps = detail::monomial_exponents(d, problem.regression.basis_degree);
    const int nb = static_cast<int>(exps.size());
    std::vector<double> energy_mean(N + 1, 0.0);
    std::vector<double> ycur(P), slice_energy(P, 0.0);
    std::vector<double> zcur(static_cast<std::size_t>(P) * d);

    for (int i = N - 1; i >= 0; --i) {
        const double t = i * dt;
        // roll states back to time t_i
        for (int p = 0; p < P; ++p)
            for (int k = 0; k < d; ++k)
                state[static_cast<std::size_t>(p) * d + k] -= bundle.inc(p, i, k);
        const double scale = 1.0 / std::max(std::sqrt(t), 1e-8);

        // regression targets: Y_{i+1} and Y_{i+1} dW_k / dt
        Eigen::MatrixXd coef(nb, 1 + d);
        if (i == 0) {
            // all paths share the state; conditional expectation = plain mean
            coef.setZero();
            coef(0, 0) = parallel_sum(P, [&](std::size_t p) { return Ynext[p]; }) / P;
            for (int k = 0; k < d; ++k)
                coef(0, 1 + k) = parallel_sum(P, [&](std::size_t p) {
                                     return Ynext[p] * bundle.inc(static_cast<int>(p), 0, k);
                                 }) /
                                 (P * dt);
        } else {
            const std::size_t chunk = 4096;
            const std::size_t n_chunks = (static_cast<std::size_t>(P) + chunk - 1) / chunk;
            std::vector<Eigen::MatrixXd> gram_parts(n_chunks), rhs_parts(n_chunks);
            parallel_for_chunks(static_cast<std::size_t>(P), chunk,
                                [&](std::size_t c, std::size_t pb, std::size_t pe) {
                                    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nb, nb);
                                    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(nb, 1 + d);
                                    std::vector<double> phi(nb);
                                    for (std::size_t p = pb; p < pe; ++p) {
                                        detail::fill_basis(exps, &state[p * d], d, scale,
                                                           phi.data());
                                        for (int a = 0; a < nb; ++a) {
                                            for (int b2 = a; b2 < nb; ++b2)
                                                G(a, b2) += phi[a] * phi[b2];
                                            R(a, 0) += phi[a] * Ynext[p];
                                            for (int k = 0; k < d; ++k)
                                                R(a, 1 + k) +=
                                                    phi[a] * Ynext[p] *
                                                    bundle.inc(static_cast<int>(p), i, k);
                                        }
                                    }
                                    gram_parts[c] = std::move(G);
                                    rhs_parts[c] = std::move(R);
                                });
            Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nb, nb);
            Eigen::MatrixXd R = Eigen::MatrixXd::Zero(nb, 1 + d);
            for (std::size_t c = 0; c < n_chunks; ++c) {
                G += gram_parts[c];
                R += rhs_parts[c];
            }
            for (int a = 0; a < nb; ++a)
                for (int b2 = 0; b2 < a; ++b2) G(a, b2) = G(b2, a);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
            const double lmin = es.eigenvalues().minCoeff();
            const double lmax = es.eigenvalues().maxCoeff();
            if (!(lmin > 0.0) || lmax / lmin > 1e12)
                throw SolverError("solve_regression: ill-conditioned regression at step " +
                                  std::to_string(i));
            coef = G.ldlt().solve(R);
            coef.rightCols(d) /= dt;
        }

        Mat minv_t;  // cached (m')^{-1} for constant-coefficient models
        if (model.constant_coefficients) minv_t = model.m0.transpose().inverse();

        double step_energy_sum = 0.0;
        {
            const std::size_t chunk = 4096;
            const std::size_t n_chunks = (static_cast<std::size_t>(P) + chunk - 1) / chunk;
            std::vector<double> e_parts(n_chunks, 0.0);
            std::vector<int> iter_parts(n_chunks, 0);
            std::vector<long> viol_parts(n_chunks, 0), clamp_parts(n_chunks, 0);
            std::vector<double> ymin_parts(n_chunks, std::numeric_limits<double>::infinity());
            std::vector<double> ymax_parts(n_chunks, -std::numeric_limits<double>::infinity());
            std::vector<std::string> errors(n_chunks);
            parallel_for_chunks(static_cast<std::size_t>(P), chunk,
                                [&](std::size_t c, std::size_t pb, std::size_t pe) {
                                    std::vector<double> phi(nb);
                                    Vec x(d), zv(d), mz(d);
                                    double esum = 0.0;
                                    for (std::size_t p = pb; p < pe; ++p) {
                                        detail::fill_basis(exps, &state[p * d], d, scale,
                                                           phi.data());
                                        double e = 0.0;
                                        Vec v = Vec::Zero(d);
                                        for (int a = 0; a < nb; ++a) {
                                            e += phi[a] * coef(a, 0);
                                            for (int k = 0; k < d; ++k)
                                                v(k) += phi[a] * coef(a, 1 + k);
                                        }
                                        for (int k = 0; k < d; ++k)
                                            x(k) = state[p * d + k];
                                        const Mat m = model.vol(t, x);
                                        zv = model.constant_coefficients
                                                 ? Vec(minv_t * v)
                                                 : Vec(m.transpose().fullPivLu().solve(v));
                                        mz = m * zv;
                                        const double mznorm = mz.norm();
                                        if (mznorm > z_abs_max) {
                                            zv *= z_abs_max / mznorm;
                                            ++clamp_parts[c];
                                        }
                                        const PicardResult pr = picard_step(
                                            [&](double y) { return problem.step(t, x, y, zv); },
                                            e, dt, problem.picard,
                                            detail::picard_init_value(init, e, sol.box));
                                        if (!pr.converged) {
                                            errors[c] = "solve_regression: Picard divergence";
                                            return;
                                        }
                                        iter_parts[c] = std::max(iter_parts[c], pr.iters);
                                        ycur[p] = pr.y;
                                        ymin_parts[c] = std::min(ymin_parts[c], pr.y);
                                        ymax_parts[c] = std::max(ymax_parts[c], pr.y);
                                        const double inc_e = (m * zv).squaredNorm() * dt;
                                        slice_energy[p] += inc_e;
                                        esum += slice_energy[p];
                                        for (int k = 0; k < d; ++k)
                                            zcur[p * d + k] = zv(k);
                                    }
                                    e_parts[c] = esum;
                                });
            for (const auto& err : errors)
                if (!err.empty()) throw SolverError(err);
            for (std::size_t c = 0; c < n_chunks; ++c) {
                step_energy_sum += e_parts[c];
                sol.diag.picard_iters_max = std::max(sol.diag.picard_iters_max, iter_parts[c]);
                sol.diag.z_clamps += clamp_parts[c];
                sol.y_min = std::min(sol.y_min, ymin_parts[c]);
                sol.y_max = std::max(sol.y_max, ymax_parts[c]);
            }
            if (sol.box) {
                for (int p = 0; p < P; ++p)
                    if (ycur[p] < sol.box->c_low - eps_box || ycur[p] > sol.box->c_high + eps_box)
                        ++sol.diag.bound_violations;
            }
        }
        energy_mean[i] = step_energy_sum / P;
        std::swap(Ynext, ycur);
        for (int p = 0; p < keep; ++p) {
            sol.path_Y[i][p] = Ynext[p];
            for (int k = 0; k < d; ++k)
                sol.path_Z[i][static_cast<std::size_t>(p) * d + k] = zcur[p * d + k];
        }
    }

    sol.y0 = Ynext[0];
    sol.z0 = Vec(d);
    for (int k = 0; k < d; ++k) sol.z0(k) = zcur[k];
    // deterministic-time energy surrogate (conditional on time 0)
    sol.diag.energy_estimate = *std::max_element(energy_mean.begin(), energy_mean.end());
    return sol;
}

inline DiscreteSolution solve(const BSDEProblem& problem,
                              PicardInit init = PicardInit::Propagated) {
    return problem.backend == Backend::Lattice ? solve_lattice(problem, init)
                                               : solve_regression(problem, init);
}

inline double energy_estimate(const DiscreteSolution& sol) { return sol.diag.energy_estimate; }

}  // namespace qbsde
