#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "qbsde/parallel.hpp"
#include "qbsde/rng.hpp"

namespace qbsde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Market primitives: d risky assets driven by M = m . W on [0, T] with the
/// identity clock dC = dt, risk premium lambda, and a declared pathwise bound
/// a_lambda on the integral of |m lambda|^2 dt.
///
/// m(s, x) must be invertible at every sampled (s, x); x is the Brownian
/// state W_s.
struct MarketModel {
    int d = 1;
    double horizon = 1.0;
    std::function<Mat(double, const Vec&)> vol;           // m
    std::function<Vec(double, const Vec&)> risk_premium;  // lambda
    double a_lambda = 0.0;
    bool constant_coefficients = false;
    Mat m0;     // cached m(0, 0) for constant models
    Vec lam0;   // cached lambda(0, 0)

    static MarketModel constant(const Mat& m, const Vec& lambda, double T) {
        if (m.rows() != m.cols() || m.rows() < 1)
            throw std::invalid_argument("MarketModel: m must be square, d >= 1");
        if (lambda.size() != m.rows())
            throw std::invalid_argument("MarketModel: lambda dimension mismatch");
        if (!(T > 0.0) || !std::isfinite(T))
            throw std::invalid_argument("MarketModel: horizon must be positive and finite");
        if (std::abs(m.determinant()) < 1e-14)
            throw std::invalid_argument("MarketModel: m is singular");
        MarketModel mm;
        mm.d = static_cast<int>(m.rows());
        mm.horizon = T;
        mm.m0 = m;
        mm.lam0 = lambda;
        mm.vol = [m](double, const Vec&) { return m; };
        mm.risk_premium = [lambda](double, const Vec&) { return lambda; };
        mm.a_lambda = (m * lambda).squaredNorm() * T;
        mm.constant_coefficients = true;
        return mm;
    }

    static MarketModel constant1d(double m, double lambda, double T) {
        Mat mm(1, 1);
        mm(0, 0) = m;
        Vec l(1);
        l(0) = lambda;
        return constant(mm, l, T);
    }

    /// |m(s,x) lambda(s,x)|^2, the (H_lambda) integrand.
    double risk_intensity(double s, const Vec& x) const {
        return (vol(s, x) * risk_premium(s, x)).squaredNorm();
    }

    // Scalar shortcuts for the d = 1 hot path.
    double m1(double s, double w) const {
        if (constant_coefficients) return m0(0, 0);
        Vec x(1);
        x(0) = w;
        return vol(s, x)(0, 0);
    }
    double lambda1(double s, double w) const {
        if (constant_coefficients) return lam0(0);
        Vec x(1);
        x(0) = w;
        return risk_premium(s, x)(0);
    }
};

/// Simulated Brownian increments, path-major: inc(p, i) is the d-vector
/// increment of step i on path p. Identical (seed, n_paths, n_steps) give a
/// bit-identical bundle regardless of thread count.
struct PathBundle {
    int n_paths = 0;
    int n_steps = 0;
    int d = 1;
    double dt = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> increments;  // n_paths * n_steps * d

    double inc(int p, int i, int k = 0) const {
        return increments[(static_cast<std::size_t>(p) * n_steps + i) * d + k];
    }
};

inline PathBundle simulate_paths(const MarketModel& model, int n_paths, int n_steps,
                                 std::uint64_t seed) {
    if (n_paths < 1 || n_steps < 1)
        throw std::invalid_argument("simulate_paths: n_paths and n_steps must be >= 1");
    if (!std::isfinite(model.horizon) || model.horizon <= 0.0)
        throw std::invalid_argument("simulate_paths: non-finite horizon");

    PathBundle b;
    b.n_paths = n_paths;
    b.n_steps = n_steps;
    b.d = model.d;
    b.dt = model.horizon / n_steps;
    b.seed = seed;
    b.increments.resize(static_cast<std::size_t>(n_paths) * n_steps * model.d);

    const double sdt = std::sqrt(b.dt);
    const std::size_t per_path = static_cast<std::size_t>(n_steps) * model.d;
    parallel_for_chunks(static_cast<std::size_t>(n_paths), 256,
                        [&](std::size_t, std::size_t pb, std::size_t pe) {
                            for (std::size_t p = pb; p < pe; ++p) {
                                StreamRng rng(seed, p);
                                double* out = &b.increments[p * per_path];
                                for (std::size_t j = 0; j < per_path; ++j)
                                    out[j] = sdt * rng.next_normal();
                            }
                        });
    return b;
}

struct StructureReport {
    double a_lambda_hat = 0.0;  // max over paths of the discretized integral
    bool pass = false;
};

/// Discretizes (H_lambda): per path, sum |m lambda|^2 dt along the simulated
/// state, reports the max and whether it stays within the declared a_lambda.
inline StructureReport check_structure_condition(const MarketModel& model,
                                                 const PathBundle& bundle) {
    const int d = model.d;
    std::vector<double> per_path(bundle.n_paths, 0.0);
    parallel_for_chunks(static_cast<std::size_t>(bundle.n_paths), 64,
                        [&](std::size_t, std::size_t pb, std::size_t pe) {
                            Vec w(d);
                            for (std::size_t p = pb; p < pe; ++p) {
                                w.setZero();
                                double acc = 0.0;
                                for (int i = 0; i < bundle.n_steps; ++i) {
                                    const double s = i * bundle.dt;
                                    acc += model.risk_intensity(s, w) * bundle.dt;
                                    for (int k = 0; k < d; ++k) w(k) += bundle.inc(p, i, k);
                                }
                                per_path[p] = acc;
                            }
                        });
    StructureReport r;
    for (double v : per_path) r.a_lambda_hat = std::max(r.a_lambda_hat, v);
    r.pass = r.a_lambda_hat <= model.a_lambda * (1.0 + 1e-12) + 1e-15;
    return r;
}

}  // namespace qbsde
