#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "qbsde/generators.hpp"

namespace qbsde {

// ---------------------------------------------------------------------------
// the plain (no quadratic-variation term) BSDE form
// ---------------------------------------------------------------------------

/// dU = -g(s, U, V) dC + V dM + dN with terminal U_T; produced from a
/// quadratic driver by the exponential change of variable, by truncation,
/// or by the inf-convolution ladder.
struct Eq2Problem {
    std::string name;
    MarketModel model;
    std::function<double(double s, const Vec& state, double u, const Vec& v)> g;
    std::function<double(double s, double w, double u, double v)> g1;
    Terminal terminal;
    std::optional<int> lipschitz_n;
    std::optional<H1Certificate> h1;
    bool u_dependent = true;

    double operator()(double s, double u, const Vec& v) const {
        return g(s, Vec::Zero(model.d), u, v);
    }
};

/// U := e^{beta Y} maps BSDE(F, beta, B) to the plain form with
///   g(s, u, v) = ( beta u F(s, ln(u)/beta, v/(beta u)) - |m v|^2/(2u) ) 1_{u>0}
/// and terminal e^{beta B}. beta = 0 is rejected (nothing to transform).
inline Eq2Problem to_eq2(const GeneratorSpec& F, double beta, const Terminal& B) {
    if (beta == 0.0) throw std::invalid_argument("to_eq2: beta must be nonzero");
    Eq2Problem p;
    p.name = F.name + "/exp-transform";
    p.model = F.model;
    const MarketModel model = F.model;
    auto eval = F.eval;
    auto eval1 = F.eval1;
    p.g = [model, eval, beta](double s, const Vec& state, double u, const Vec& v) {
        if (!(u > 0.0)) return 0.0;
        const double y = std::log(u) / beta;
        const Vec z = v / (beta * u);
        return beta * u * eval(s, state, y, z) -
               (model.vol(s, state) * v).squaredNorm() / (2.0 * u);
    };
    p.g1 = [model, eval1, beta](double s, double w, double u, double v) {
        if (!(u > 0.0)) return 0.0;
        const double m = model.m1(s, w);
        return beta * u * eval1(s, w, std::log(u) / beta, v / (beta * u)) -
               m * m * v * v / (2.0 * u);
    };
    const double sup = std::exp(std::abs(beta) * B.sup_norm);
    auto bfn = B.fn;
    p.terminal = Terminal::of(
        [bfn, beta](const Vec& w) { return std::exp(beta * bfn(w)); }, sup);
    p.u_dependent = true;
    return p;
}

/// Node/path-wise inverse of the exponential change of variable:
/// Y = ln(U)/beta, Z = V/(beta U). Any U <= 0 signals a solver or
/// truncation failure and is rejected.
inline std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>>
from_eq2_solution(const std::vector<std::vector<double>>& U,
                  const std::vector<std::vector<double>>& V, double beta) {
    if (beta == 0.0) throw std::invalid_argument("from_eq2_solution: beta must be nonzero");
    std::vector<std::vector<double>> Y(U.size()), Z(U.size());
    for (std::size_t i = 0; i < U.size(); ++i) {
        Y[i].resize(U[i].size());
        Z[i].resize(U[i].size());
        for (std::size_t j = 0; j < U[i].size(); ++j) {
            const double u = U[i][j];
            if (!(u > 0.0))
                throw std::domain_error("from_eq2_solution: U <= 0 at a node");
            Y[i][j] = std::log(u) / beta;
            const double v = i < V.size() && j < V[i].size() ? V[i][j] : 0.0;
            Z[i][j] = v / (beta * u);
        }
    }
    return {std::move(Y), std::move(Z)};
}

// ---------------------------------------------------------------------------
// truncations
// ---------------------------------------------------------------------------

struct TruncationConstants {
    double c1 = 0.0;  // lower bound of U, e^{-|beta|(|B|_inf + a)}
    double c2 = 0.0;  // upper bound of U, e^a - 1 + |e^{beta B}|_inf e^a
    double K = 0.0;   // |c| + |C| of the a priori envelope
};

inline TruncationConstants truncation_constants(double a, double beta, double b_sup,
                                                double b = 0.0) {
    if (!std::isfinite(a) || !std::isfinite(beta) || !std::isfinite(b_sup))
        throw std::invalid_argument("truncation_constants: non-finite input");
    TruncationConstants tc;
    tc.c1 = std::exp(-std::abs(beta) * (b_sup + a));
    tc.c2 = std::expm1(a) + std::exp(std::abs(beta) * b_sup + a);
    H1Certificate h1;
    h1.alpha_bar = [](double) { return 0.0; };
    h1.a = a;
    h1.b = b;
    h1.gamma = std::max({1.0, std::abs(beta), b});
    h1.beta = beta;
    const AprioriBounds ab = apriori_bounds(h1, b_sup);
    tc.K = std::abs(ab.c_low) + std::abs(ab.c_high);
    if (tc.c1 > tc.c2)
        throw std::logic_error("truncation_constants: c1 > c2");
    return tc;
}

/// F^K(s, y, z) = F(s, clamp(y, -K, K), z). Replacing alpha_bar by
/// alpha_bar (1 + bK) turns an H1 certificate into the y-free variant.
inline GeneratorSpec truncate_y(const GeneratorSpec& F, double K) {
    if (!(K > 0.0)) throw std::invalid_argument("truncate_y: K must be > 0");
    GeneratorSpec g = F;
    g.name = F.name + "/y-truncated";
    auto eval = F.eval;
    auto eval1 = F.eval1;
    g.eval = [eval, K](double s, const Vec& state, double y, const Vec& z) {
        return eval(s, state, std::clamp(y, -K, K), z);
    };
    g.eval1 = [eval1, K](double s, double w, double y, double z) {
        return eval1(s, w, std::clamp(y, -K, K), z);
    };
    const double scale = 1.0 + F.h1.b * K;
    auto base = F.h1.alpha_bar;
    g.h1.alpha_bar = [base, scale](double s) { return base(s) * scale; };
    g.h1.a = F.h1.a * scale;
    g.h1.b = 0.0;
    g.h1.variant = H1Variant::H1Prime;
    if (g.h2) g.h2->mu = std::max(g.h2->mu, 0.0);
    return g;
}

/// Truncated exponential-transform driver
///   G(s,u,v) = beta clamp(u, -c2, c2) F(s, ln(u v c1)/beta, v/(beta (u v c1)))
///              - |m v|^2 / (2 (u v c1)),
/// which coincides with the raw g of to_eq2 on [c1, c2] x R^d and is
/// singularity-free below c1. Carries the certificate with
/// gamma_hat = gamma c2 / (|beta| c1^2) + 1/c1, b = 1, a = |beta| a_F.
inline Eq2Problem truncate_u(const GeneratorSpec& F, double beta, const Terminal& B, double c1,
                             double c2) {
    if (!(0.0 < c1 && c1 <= c2)) throw std::invalid_argument("truncate_u: need 0 < c1 <= c2");
    if (beta == 0.0) throw std::invalid_argument("truncate_u: beta must be nonzero");
    Eq2Problem p;
    p.name = F.name + "/u-truncated";
    p.model = F.model;
    const MarketModel model = F.model;
    auto eval = F.eval;
    auto eval1 = F.eval1;
    p.g = [model, eval, beta, c1, c2](double s, const Vec& state, double u, const Vec& v) {
        const double uc = std::max(u, c1);
        const double rho = std::clamp(u, -c2, c2);
        return beta * rho * eval(s, state, std::log(uc) / beta, Vec(v / (beta * uc))) -
               (model.vol(s, state) * v).squaredNorm() / (2.0 * uc);
    };
    p.g1 = [model, eval1, beta, c1, c2](double s, double w, double u, double v) {
        const double uc = std::max(u, c1);
        const double rho = std::clamp(u, -c2, c2);
        const double m = model.m1(s, w);
        return beta * rho * eval1(s, w, std::log(uc) / beta, v / (beta * uc)) -
               m * m * v * v / (2.0 * uc);
    };
    const double sup = std::exp(std::abs(beta) * B.sup_norm);
    auto bfn = B.fn;
    p.terminal =
        Terminal::of([bfn, beta](const Vec& w) { return std::exp(beta * bfn(w)); }, sup);

    H1Certificate h1;
    const double abs_beta = std::abs(beta);
    auto base = F.h1.alpha_bar;
    h1.alpha_bar = [base, abs_beta](double s) { return abs_beta * base(s); };
    h1.a = abs_beta * F.h1.a;
    h1.b = 1.0;
    h1.gamma = F.h1.gamma * c2 / (abs_beta * c1 * c1) + 1.0 / c1;
    h1.beta = 0.0;
    h1.variant = H1Variant::H1;
    h1.validate();
    p.h1 = h1;
    p.u_dependent = true;
    return p;
}

// ---------------------------------------------------------------------------
// inf-convolution ladder
// ---------------------------------------------------------------------------

/// Finite evaluation grid for the inf-convolution. An empty u_points list
/// declares g independent of u, in which case only v is convolved (the
/// u-Lipschitz requirement then holds trivially).
struct InfConvGrid {
    std::vector<double> u_points;
    std::vector<Vec> v_points;

    static InfConvGrid tensor1d(double u_lo, double u_hi, double v_max, int per_axis = 101) {
        InfConvGrid grid;
        grid.u_points.reserve(per_axis);
        grid.v_points.reserve(per_axis);
        for (int i = 0; i < per_axis; ++i) {
            const double t = per_axis == 1 ? 0.5 : static_cast<double>(i) / (per_axis - 1);
            grid.u_points.push_back(u_lo + t * (u_hi - u_lo));
            Vec v(1);
            v(0) = -v_max + t * 2.0 * v_max;
            grid.v_points.push_back(v);
        }
        return grid;
    }

    static InfConvGrid v_axis1d(double v_max, int per_axis = 101) {
        InfConvGrid grid = tensor1d(0.0, 0.0, v_max, per_axis);
        grid.u_points.clear();
        return grid;
    }
};

/// Lipschitz regularization over the declared grid plus the query point:
///   g^n(s,u,v) = min( g(s,u,v),
///                     min_{(u',v') in grid} g(s,u',v') + n|m(v-v')| + n|u-u'| ).
/// Including the query point keeps g^n <= g pointwise everywhere; g^n is
/// nondecreasing in n and exactly n-Lipschitz at grid points.
inline Eq2Problem inf_convolve(const Eq2Problem& base, int n, const InfConvGrid& grid) {
    if (n < 1) throw std::invalid_argument("inf_convolve: n must be >= 1");
    if (grid.v_points.empty()) throw std::invalid_argument("inf_convolve: empty grid");
    const bool convolve_u = base.u_dependent;
    if (convolve_u && grid.u_points.empty())
        throw std::invalid_argument("inf_convolve: u-dependent driver needs u grid points");

    Eq2Problem p = base;
    p.name = base.name + "/lipschitz-" + std::to_string(n);
    p.lipschitz_n = n;
    const MarketModel model = base.model;
    auto g0 = base.g;
    auto g01 = base.g1;
    const double nn = n;
    const InfConvGrid G = grid;

    p.g = [model, g0, nn, G, convolve_u](double s, const Vec& state, double u, const Vec& v) {
        const Mat m = model.vol(s, state);
        double best = g0(s, state, u, v);
        for (const Vec& vp : G.v_points) {
            const double vpen = nn * (m * (v - vp)).norm();
            if (convolve_u) {
                for (double up : G.u_points) {
                    const double cand = g0(s, state, up, vp) + vpen + nn * std::abs(u - up);
                    if (cand < best) best = cand;
                }
            } else {
                const double cand = g0(s, state, u, vp) + vpen;
                if (cand < best) best = cand;
            }
        }
        return best;
    };
    if (g01) {
        std::vector<double> v1;
        v1.reserve(G.v_points.size());
        for (const Vec& vp : G.v_points) v1.push_back(vp(0));
        std::vector<double> u1 = G.u_points;
        p.g1 = [model, g01, nn, v1, u1, convolve_u](double s, double w, double u, double v) {
            const double m = std::abs(model.m1(s, w));
            double best = g01(s, w, u, v);
            for (double vp : v1) {
                const double vpen = nn * m * std::abs(v - vp);
                if (convolve_u) {
                    for (double up : u1) {
                        const double cand = g01(s, w, up, vp) + vpen + nn * std::abs(u - up);
                        if (cand < best) best = cand;
                    }
                } else {
                    const double cand = g01(s, w, u, vp) + vpen;
                    if (cand < best) best = cand;
                }
            }
            return best;
        };
    }
    return p;
}

/// Two-sided ladder for drivers without a Lipschitz lower bound: the same
/// primitive applied to the positive and negative parts and differenced,
/// increasing in n and decreasing in p.
inline Eq2Problem inf_convolve_two_sided(const Eq2Problem& base, int n, int p,
                                         const InfConvGrid& grid) {
    Eq2Problem plus = base;
    auto g0 = base.g;
    auto g01 = base.g1;
    plus.g = [g0](double s, const Vec& st, double u, const Vec& v) {
        return std::max(g0(s, st, u, v), 0.0);
    };
    if (g01)
        plus.g1 = [g01](double s, double w, double u, double v) {
            return std::max(g01(s, w, u, v), 0.0);
        };
    Eq2Problem minus = base;
    minus.g = [g0](double s, const Vec& st, double u, const Vec& v) {
        return std::max(-g0(s, st, u, v), 0.0);
    };
    if (g01)
        minus.g1 = [g01](double s, double w, double u, double v) {
            return std::max(-g01(s, w, u, v), 0.0);
        };

    const Eq2Problem cp = inf_convolve(plus, n, grid);
    const Eq2Problem cm = inf_convolve(minus, p, grid);
    Eq2Problem out = base;
    out.name = base.name + "/lipschitz-" + std::to_string(n) + "-" + std::to_string(p);
    out.lipschitz_n = std::max(n, p);
    auto gp = cp.g;
    auto gm = cm.g;
    out.g = [gp, gm](double s, const Vec& st, double u, const Vec& v) {
        return gp(s, st, u, v) - gm(s, st, u, v);
    };
    if (cp.g1 && cm.g1) {
        auto gp1 = cp.g1;
        auto gm1 = cm.g1;
        out.g1 = [gp1, gm1](double s, double w, double u, double v) {
            return gp1(s, w, u, v) - gm1(s, w, u, v);
        };
    }
    return out;
}

}  // namespace qbsde
