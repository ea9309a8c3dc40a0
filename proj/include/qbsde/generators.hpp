#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "qbsde/constraints.hpp"
#include "qbsde/market.hpp"

namespace qbsde {

// ---------------------------------------------------------------------------
// growth certificates
// ---------------------------------------------------------------------------

enum class H1Variant { H1, H1Prime, H1DoublePrime };

/// Quadratic-growth certificate for a driver F:
///   |F(s, y, z)| <= alpha_bar(s) + b * alpha_bar(s) * |y| + (gamma/2)|m z|^2,
/// with gamma >= |beta|, gamma >= b and integral of alpha_bar over [0, T]
/// bounded by `a`. The Prime variant drops the |y| term; the DoublePrime
/// variant adds the one-sided linear lower bound -C1*(alpha_bar + |m z|).
struct H1Certificate {
    std::function<double(double)> alpha_bar;
    double a = 0.0;
    double b = 0.0;
    double gamma = 1.0;
    double beta = 0.0;
    H1Variant variant = H1Variant::H1;
    double C1 = 0.0;

    void validate() const {
        if (!alpha_bar) throw std::invalid_argument("H1Certificate: alpha_bar missing");
        if (!(gamma > 0.0)) throw std::invalid_argument("H1Certificate: gamma must be > 0");
        if (gamma < std::abs(beta) - 1e-15)
            throw std::invalid_argument("H1Certificate: gamma < |beta|");
        if (gamma < b - 1e-15) throw std::invalid_argument("H1Certificate: gamma < b");
        if (!(a >= 0.0) || !(b >= 0.0))
            throw std::invalid_argument("H1Certificate: a, b must be >= 0");
        if (variant == H1Variant::H1DoublePrime && !(C1 > 0.0))
            throw std::invalid_argument("H1Certificate: C1 must be > 0 for the two-sided variant");
    }

    /// Trapezoid check of the integral bound on the discretized clock.
    bool integral_bound_holds(double T, int n = 2048) const {
        const double dt = T / n;
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            acc += 0.5 * (alpha_bar(i * dt) + alpha_bar((i + 1) * dt)) * dt;
        return acc <= a * (1.0 + 1e-9) + 1e-15;
    }
};

/// Uniqueness certificate: monotonicity in y with constant mu and the local
/// Lipschitz bound in z,
///   |F(s,y,z1) - F(s,y,z2)| <= C2 (|m theta(s)| + |m z1| + |m z2|) |m(z1 - z2)|.
struct H2Certificate {
    double mu = 0.0;
    double C2 = 0.0;
    std::function<Vec(double)> theta;
    double c_theta = 0.0;
};

// ---------------------------------------------------------------------------
// driver interface
// ---------------------------------------------------------------------------

/// Bounded terminal condition, a function of the terminal Brownian state.
struct Terminal {
    std::function<double(const Vec&)> fn;
    double sup_norm = 0.0;

    static Terminal zero(int) {
        return {[](const Vec&) { return 0.0; }, 0.0};
    }
    static Terminal constant(double b) {
        return {[b](const Vec&) { return b; }, std::abs(b)};
    }
    static Terminal of(std::function<double(const Vec&)> f, double sup) {
        return {std::move(f), sup};
    }

    double operator()(const Vec& w) const { return fn(w); }
    double operator()(double w) const {
        Vec v(1);
        v(0) = w;
        return fn(v);
    }
};

/// A driver F(s, y, z) with its growth certificates. State enters through
/// the model coefficients m_s, lambda_s; `eval` receives the Brownian state
/// explicitly, and eval1 is the allocation-free d = 1 path used by the
/// lattice backend.
struct GeneratorSpec {
    std::string name;
    MarketModel model;
    std::function<double(double s, const Vec& state, double y, const Vec& z)> eval;
    std::function<double(double s, double w, double y, double z)> eval1;
    H1Certificate h1;
    std::optional<H2Certificate> h2;
    double beta = 0.0;

    double operator()(double s, double y, const Vec& z) const {
        return eval(s, Vec::Zero(model.d), y, z);
    }
};

// ---------------------------------------------------------------------------
// built-in drivers
// ---------------------------------------------------------------------------

/// Driver of the exponential-utility BSDE with risk aversion alpha:
///   F(s, z) = inf_{nu in C} (alpha/2)|m(nu - (z + lambda/alpha))|^2
///             - (m z).(m lambda) - |m lambda|^2 / (2 alpha),
/// independent of y; the BSDE carries beta = alpha.
inline GeneratorSpec make_exponential_generator(const MarketModel& model,
                                                const ConstraintSet& set, double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("exponential generator: alpha must be > 0");
    if (set.dim() != model.d)
        throw std::invalid_argument("exponential generator: set dimension mismatch");
    if (!set.contains(Vec::Zero(model.d)))
        throw std::invalid_argument("exponential generator: 0 must belong to the set");

    GeneratorSpec g;
    g.name = "exponential";
    g.model = model;
    g.beta = alpha;
    g.eval = [model, set, alpha](double s, const Vec& state, double, const Vec& z) {
        const Mat m = model.vol(s, state);
        const Vec lam = model.risk_premium(s, state);
        const Vec mz = m * z;
        const Vec ml = m * lam;
        return 0.5 * alpha * set.dist_sq(z + lam / alpha, m) - mz.dot(ml) -
               ml.squaredNorm() / (2.0 * alpha);
    };
    g.eval1 = [model, set, alpha](double s, double w, double, double z) {
        const double m = model.m1(s, w);
        const double lam = model.lambda1(s, w);
        const double ml = m * lam;
        return 0.5 * alpha * set.dist_sq1(z + lam / alpha, m) - (m * z) * ml -
               ml * ml / (2.0 * alpha);
    };

    // alpha_bar_s = |m lambda|^2 / alpha, b = 0, gamma = alpha
    g.h1.alpha_bar = [model](double s) { return model.risk_intensity(s, Vec::Zero(model.d)); };
    {
        const double inv_alpha = 1.0 / alpha;
        auto base = g.h1.alpha_bar;
        g.h1.alpha_bar = [base, inv_alpha](double s) { return base(s) * inv_alpha; };
    }
    g.h1.a = model.a_lambda / alpha;
    g.h1.b = 0.0;
    g.h1.gamma = alpha;
    g.h1.beta = alpha;
    g.h1.variant = H1Variant::H1;
    double ml_sup = 0.0;
    for (int i = 0; i <= 64; ++i) {
        const double s = model.horizon * i / 64.0;
        ml_sup = std::max(ml_sup, std::sqrt(model.risk_intensity(s, Vec::Zero(model.d))));
    }
    g.h1.C1 = std::max(0.5, ml_sup);
    g.h1.validate();

    H2Certificate h2;
    h2.mu = 0.0;
    h2.C2 = 0.5 * alpha;
    h2.theta = [model, alpha](double s) {
        return Vec((4.0 / alpha) * model.risk_premium(s, Vec::Zero(model.d)));
    };
    h2.c_theta = 16.0 * model.a_lambda / (alpha * alpha);
    g.h2 = h2;
    return g;
}

/// Driver f1 of the power-utility BSDE, gamma_u in (0, 1):
///   f1(s, z) = inf_{rho in C} (g(1-g)/2)|m(rho - (z+lambda)/(1-g))|^2
///              - (g(1-g)/2)|m (z+lambda)/(1-g)|^2 - |m z|^2 / 2.
inline GeneratorSpec make_power_generator(const MarketModel& model, const ConstraintSet& set,
                                          double gamma_u) {
    if (!(gamma_u > 0.0 && gamma_u < 1.0))
        throw std::invalid_argument("power generator: gamma_u must lie in (0, 1)");
    if (set.dim() != model.d)
        throw std::invalid_argument("power generator: set dimension mismatch");

    const double gu = gamma_u;
    const double c = 0.5 * gu * (1.0 - gu);
    GeneratorSpec g;
    g.name = "power";
    g.model = model;
    g.beta = 0.5;
    g.eval = [model, set, gu, c](double s, const Vec& state, double, const Vec& z) {
        const Mat m = model.vol(s, state);
        const Vec lam = model.risk_premium(s, state);
        const Vec w = (z + lam) / (1.0 - gu);
        return c * (set.dist_sq(w, m) - (m * w).squaredNorm()) - 0.5 * (m * z).squaredNorm();
    };
    g.eval1 = [model, set, gu, c](double s, double ws, double, double z) {
        const double m = model.m1(s, ws);
        const double lam = model.lambda1(s, ws);
        const double w = (z + lam) / (1.0 - gu);
        return c * (set.dist_sq1(w, m) - m * m * w * w) - 0.5 * m * m * z * z;
    };

    const double k = gu / (1.0 - gu);
    g.h1.alpha_bar = [model, k](double s) {
        return k * model.risk_intensity(s, Vec::Zero(model.d));
    };
    g.h1.a = k * model.a_lambda;
    g.h1.b = 0.0;
    g.h1.gamma = 2.0 * k + 1.0;
    g.h1.beta = 0.5;
    g.h1.variant = H1Variant::H1;
    g.h1.validate();

    H2Certificate h2;
    h2.mu = 0.0;
    h2.C2 = k + 0.5;
    const double ktheta = 2.0 * k / h2.C2;
    h2.theta = [model, ktheta](double s) {
        return Vec(ktheta * model.risk_premium(s, Vec::Zero(model.d)));
    };
    h2.c_theta = ktheta * ktheta * model.a_lambda;
    g.h2 = h2;
    return g;
}

/// Driver f2 of the log-utility BSDE:
///   f2(s) = inf_{rho in C} |m(rho - lambda)|^2 / 2 - |m lambda|^2 / 2,
/// independent of both y and z; no quadratic-variation term (beta = 0).
inline GeneratorSpec make_log_generator(const MarketModel& model, const ConstraintSet& set) {
    if (set.dim() != model.d) throw std::invalid_argument("log generator: set dimension mismatch");

    GeneratorSpec g;
    g.name = "log";
    g.model = model;
    g.beta = 0.0;
    g.eval = [model, set](double s, const Vec& state, double, const Vec&) {
        const Mat m = model.vol(s, state);
        const Vec lam = model.risk_premium(s, state);
        return 0.5 * set.dist_sq(lam, m) - 0.5 * (m * lam).squaredNorm();
    };
    g.eval1 = [model, set](double s, double w, double, double) {
        const double m = model.m1(s, w);
        const double lam = model.lambda1(s, w);
        return 0.5 * set.dist_sq1(lam, m) - 0.5 * m * m * lam * lam;
    };
    g.h1.alpha_bar = [model](double s) {
        return 0.5 * model.risk_intensity(s, Vec::Zero(model.d));
    };
    g.h1.a = 0.5 * model.a_lambda;
    g.h1.b = 0.0;
    g.h1.gamma = 1.0;
    g.h1.beta = 0.0;
    g.h1.variant = H1Variant::H1;
    g.h1.validate();

    H2Certificate h2;
    h2.mu = 0.0;
    h2.C2 = 0.0;
    h2.theta = [d = model.d](double) { return Vec(Vec::Zero(d)); };
    h2.c_theta = 0.0;
    g.h2 = h2;
    return g;
}

/// Test driver F(s, y, z) = c0 + cy * y + (cz2/2)|m z|^2 with auto-derived
/// certificates.
inline GeneratorSpec make_custom_generator(const MarketModel& model, double c0, double cy,
                                           double cz2) {
    GeneratorSpec g;
    g.name = "custom";
    g.model = model;
    g.beta = 0.0;
    g.eval = [model, c0, cy, cz2](double s, const Vec& state, double y, const Vec& z) {
        return c0 + cy * y + 0.5 * cz2 * (model.vol(s, state) * z).squaredNorm();
    };
    g.eval1 = [model, c0, cy, cz2](double s, double w, double y, double z) {
        const double m = model.m1(s, w);
        return c0 + cy * y + 0.5 * cz2 * m * m * z * z;
    };
    const double abar = std::max({std::abs(c0), std::abs(cy), 1e-12});
    g.h1.alpha_bar = [abar](double) { return abar; };
    g.h1.a = abar * model.horizon;
    g.h1.b = std::abs(cy) / abar;
    g.h1.gamma = std::max({std::abs(cz2), g.h1.b, 1e-6});
    g.h1.beta = 0.0;
    g.h1.variant = H1Variant::H1;
    g.h1.validate();

    H2Certificate h2;
    h2.mu = cy;
    h2.C2 = 0.5 * std::abs(cz2);
    h2.theta = [d = model.d](double) { return Vec(Vec::Zero(d)); };
    h2.c_theta = 0.0;
    g.h2 = h2;
    return g;
}

// ---------------------------------------------------------------------------
// certificate checks on a deterministic low-discrepancy grid
// ---------------------------------------------------------------------------

inline double halton(std::uint64_t i, int base) {
    double f = 1.0, r = 0.0;
    while (i > 0) {
        f /= base;
        r += f * static_cast<double>(i % base);
        i /= base;
    }
    return r;
}

/// Compact sampling box for the universally quantified certificate checks.
struct SampleBox {
    double y_max = 2.0;
    double z_max = 2.0;
    int n_samples = 10000;
};

struct CertificateReport {
    bool pass = false;
    double worst_slack = 0.0;  // min over samples of (bound - quantity); < 0 fails
};

inline CertificateReport check_h1(const GeneratorSpec& spec, const SampleBox& box) {
    static const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19};
    const int d = spec.model.d;
    const double T = spec.model.horizon;
    const auto& c = spec.h1;
    c.validate();

    CertificateReport rep;
    rep.worst_slack = std::numeric_limits<double>::infinity();
    Vec z(d);
    const Vec state = Vec::Zero(d);
    // anchor points (center of the box) first, then the low-discrepancy grid
    for (int i = -3; i <= box.n_samples; ++i) {
        double s, y;
        if (i <= 0) {
            s = T * (i + 3) / 3.0 * 0.5;
            y = 0.0;
            z.setZero();
        } else {
            s = T * halton(i, primes[0]);
            y = box.y_max * (2.0 * halton(i, primes[1]) - 1.0);
            for (int k = 0; k < d; ++k)
                z(k) = box.z_max * (2.0 * halton(i, primes[2 + (k % 6)]) - 1.0);
        }
        const double F = spec.eval(s, state, y, z);
        const double mz2 = (spec.model.vol(s, state) * z).squaredNorm();
        const double ab = c.alpha_bar(s);

        double upper;
        switch (c.variant) {
            case H1Variant::H1: upper = ab + c.b * ab * std::abs(y) + 0.5 * c.gamma * mz2; break;
            default: upper = ab + 0.5 * c.gamma * mz2; break;
        }
        rep.worst_slack = std::min(rep.worst_slack, upper - std::abs(F));
        if (c.variant == H1Variant::H1DoublePrime) {
            const double lower = -c.C1 * (ab + std::sqrt(mz2));
            rep.worst_slack = std::min(rep.worst_slack, F - lower);
        }
    }
    if (!c.integral_bound_holds(T)) rep.worst_slack = -std::numeric_limits<double>::infinity();
    rep.pass = rep.worst_slack >= -1e-9;
    return rep;
}

inline CertificateReport check_h2(const GeneratorSpec& spec, const SampleBox& box) {
    if (!spec.h2) throw std::invalid_argument("check_h2: generator carries no H2 certificate");
    static const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29};
    const int d = spec.model.d;
    const double T = spec.model.horizon;
    const auto& c = *spec.h2;

    CertificateReport rep;
    rep.worst_slack = std::numeric_limits<double>::infinity();

    // integral bound on theta before the pointwise inequalities
    {
        const int n = 512;
        const double dt = T / n;
        const Vec st = Vec::Zero(d);
        double acc = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double s = i * dt;
            const double w = i == 0 || i == n ? 0.5 : 1.0;
            acc += w * (spec.model.vol(s, st) * c.theta(s)).squaredNorm() * dt;
        }
        rep.worst_slack = std::min(rep.worst_slack, c.c_theta * (1.0 + 1e-9) + 1e-15 - acc);
    }
    Vec z1(d), z2(d);
    const Vec state = Vec::Zero(d);
    for (int i = 1; i <= box.n_samples; ++i) {
        const double s = T * halton(i, primes[0]);
        const double y1 = box.y_max * (2.0 * halton(i, primes[1]) - 1.0);
        const double y2 = box.y_max * (2.0 * halton(i, primes[2]) - 1.0);
        for (int k = 0; k < d; ++k) {
            z1(k) = box.z_max * (2.0 * halton(i, primes[3 + (k % 3)]) - 1.0);
            z2(k) = box.z_max * (2.0 * halton(i, primes[6 + (k % 3)]) - 1.0);
        }
        const Mat m = spec.model.vol(s, state);

        // monotonicity in y at z1
        const double dF = spec.eval(s, state, y1, z1) - spec.eval(s, state, y2, z1);
        const double lhs = (y1 - y2) * dF;
        rep.worst_slack = std::min(rep.worst_slack, c.mu * (y1 - y2) * (y1 - y2) - lhs);

        // local Lipschitz increment in z at y1
        const double inc =
            std::abs(spec.eval(s, state, y1, z1) - spec.eval(s, state, y1, z2));
        const double bound = c.C2 *
                             ((m * c.theta(s)).norm() + (m * z1).norm() + (m * z2).norm()) *
                             (m * (z1 - z2)).norm();
        rep.worst_slack = std::min(rep.worst_slack, bound - inc);
    }
    rep.pass = rep.worst_slack >= -1e-9;
    return rep;
}

// ---------------------------------------------------------------------------
// a priori bound machinery
// ---------------------------------------------------------------------------

struct AprioriBounds {
    double c_low = 0.0;
    double c_high = 0.0;
};

/// Solution envelope c <= Y <= C with C = a_tilde + |B|_inf e^{ba} and
/// a_tilde = (e^{ba} - 1)/b (continuously extended to a at b = 0).
inline AprioriBounds apriori_bounds(const H1Certificate& h1, double b_sup) {
    if (!(b_sup >= 0.0) || !std::isfinite(b_sup))
        throw std::invalid_argument("apriori_bounds: b_sup must be finite and >= 0");
    const double ba = h1.b * h1.a;
    const double a_tilde = h1.b == 0.0 ? h1.a : std::expm1(ba) / h1.b;
    const double C = a_tilde + b_sup * std::exp(ba);
    return {-C, C};
}

inline double psi_gamma(double gamma, double x) {
    return (std::expm1(gamma * x) - gamma * x) / (gamma * gamma);
}
inline double psi_gamma_prime(double gamma, double x) { return std::expm1(gamma * x) / gamma; }

inline double phi_big(double L, double x) { return (std::expm1(L * x) - L * x) / (L * L); }
inline double phi_big_prime(double L, double x) { return std::expm1(L * x) / L; }
inline double phi_big_second(double L, double x) { return std::exp(L * x); }

/// phi_t(z) = exp(gamma (e^{I} - 1)/b) exp(gamma z e^{I}) with
/// I = int_t^T b alpha_bar dC; decreasing in t, >= 1, and phi_0 dominates
/// exp(gamma |Y|) for any certified solution. Requires z >= 0.
inline double phi_domination(const H1Certificate& h1, double t, double T, double z, int n = 512) {
    if (z < 0.0) throw std::invalid_argument("phi_domination: z must be >= 0");
    const double dt = (T - t) / n;
    double I = 0.0;
    for (int i = 0; i < n; ++i)
        I += 0.5 * (h1.alpha_bar(t + i * dt) + h1.alpha_bar(t + (i + 1) * dt)) * dt;
    const double ebI = std::exp(h1.b * I);
    const double first = h1.b == 0.0 ? I : std::expm1(h1.b * I) / h1.b;
    return std::exp(h1.gamma * first) * std::exp(h1.gamma * z * ebI);
}

/// Certificate constant for the conditional energy of (Z, L):
///   E^{F_tau}( int_tau^T |m Z|^2 dC + <L>_T - <L>_tau ) <= C'.
/// Assembly: with psi = psi_gamma shifted by |c| and the envelope C of
/// apriori_bounds, moving the quadratic terms of Ito's formula to the left
/// gives 1/2 of the energy on the left and
/// psi(Y_T) - psi(Y_tau) + int psi'(Y) alpha_bar (1 + b |Y|) dC on the
/// right, whence C' = 2 (psi_gamma(2C) + psi_gamma'(2C) a (1 + b C)).
inline double energy_bound_constant(const H1Certificate& h1, double b_sup) {
    const double C = apriori_bounds(h1, b_sup).c_high;
    return 2.0 * (psi_gamma(h1.gamma, 2.0 * C) +
                  psi_gamma_prime(h1.gamma, 2.0 * C) * h1.a * (1.0 + h1.b * C));
}

}  // namespace qbsde
