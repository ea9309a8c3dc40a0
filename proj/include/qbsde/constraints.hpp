#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "qbsde/market.hpp"

namespace qbsde {

/// Closed constraint set C in R^d with 0 in C (checked at construction;
/// union members may individually skip the check, the union itself must
/// contain 0), closed under the primitive kinds below plus finite unions
/// (the non-convex cases). Projection is in
/// the m-weighted metric |m(nu - target)|^2; when the minimizer is not
/// unique the lexicographically smallest one is returned, which makes the
/// selection deterministic and measurable.
class ConstraintSet {
public:
    enum class Kind { FullSpace, Singleton, Box, Ball, FiniteSet, Union, Halfspace };

    static constexpr double kMembershipTol = 1e-12;

    static ConstraintSet full_space(int d) {
        ConstraintSet s(Kind::FullSpace, d);
        return s;
    }

    static ConstraintSet singleton(const Vec& p, bool require_zero = true) {
        ConstraintSet s(Kind::Singleton, static_cast<int>(p.size()));
        s.point_ = p;
        if (require_zero) s.require_contains_zero();
        return s;
    }

    static ConstraintSet box(const Vec& lower, const Vec& upper, bool require_zero = true) {
        if (lower.size() != upper.size() || lower.size() == 0)
            throw std::invalid_argument("ConstraintSet::box: bound dimension mismatch");
        if (((upper - lower).array() < 0.0).any())
            throw std::invalid_argument("ConstraintSet::box: lower > upper");
        ConstraintSet s(Kind::Box, static_cast<int>(lower.size()));
        s.lower_ = lower;
        s.upper_ = upper;
        if (require_zero) s.require_contains_zero();
        return s;
    }

    static ConstraintSet ball(const Vec& center, double radius, bool require_zero = true) {
        if (!(radius >= 0.0))
            throw std::invalid_argument("ConstraintSet::ball: negative radius");
        ConstraintSet s(Kind::Ball, static_cast<int>(center.size()));
        s.center_ = center;
        s.radius_ = radius;
        if (require_zero) s.require_contains_zero();
        return s;
    }

    static ConstraintSet finite_set(std::vector<Vec> points, bool require_zero = true) {
        if (points.empty())
            throw std::invalid_argument("ConstraintSet::finite_set: empty point list");
        ConstraintSet s(Kind::FiniteSet, static_cast<int>(points.front().size()));
        for (const auto& p : points)
            if (p.size() != s.dim_)
                throw std::invalid_argument("ConstraintSet::finite_set: dimension mismatch");
        s.points_ = std::move(points);
        if (require_zero) s.require_contains_zero();
        return s;
    }

    static ConstraintSet union_of(std::vector<ConstraintSet> members, bool require_zero = true) {
        if (members.empty())
            throw std::invalid_argument("ConstraintSet::union_of: empty union");
        ConstraintSet s(Kind::Union, members.front().dim_);
        for (const auto& c : members)
            if (c.dim_ != s.dim_)
                throw std::invalid_argument("ConstraintSet::union_of: dimension mismatch");
        s.members_ = std::move(members);
        if (require_zero) s.require_contains_zero();
        return s;
    }

    /// { x : normal . x <= offset }
    static ConstraintSet halfspace(const Vec& normal, double offset, bool require_zero = true) {
        if (normal.size() == 0 || normal.norm() == 0.0)
            throw std::invalid_argument("ConstraintSet::halfspace: zero normal");
        ConstraintSet s(Kind::Halfspace, static_cast<int>(normal.size()));
        s.normal_ = normal;
        s.offset_ = offset;
        if (require_zero) s.require_contains_zero();
        return s;
    }

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }

    bool contains(const Vec& x, double tol = kMembershipTol) const {
        switch (kind_) {
            case Kind::FullSpace: return true;
            case Kind::Singleton: return (x - point_).lpNorm<Eigen::Infinity>() <= tol;
            case Kind::Box:
                return ((x - lower_).array() >= -tol).all() &&
                       ((upper_ - x).array() >= -tol).all();
            case Kind::Ball: return (x - center_).norm() <= radius_ + tol;
            case Kind::FiniteSet:
                for (const auto& p : points_)
                    if ((x - p).lpNorm<Eigen::Infinity>() <= tol) return true;
                return false;
            case Kind::Union:
                for (const auto& c : members_)
                    if (c.contains(x, tol)) return true;
                return false;
            case Kind::Halfspace: return normal_.dot(x) <= offset_ + tol;
        }
        return false;
    }

    /// Nearest point of the set to `target` in the |m(.)| metric.
    Vec project(const Vec& target, const Mat& m) const {
        if (target.size() != dim_ || m.rows() != dim_ || m.cols() != dim_)
            throw std::invalid_argument("ConstraintSet::project: dimension mismatch");
        if (std::abs(m.determinant()) < 1e-14)
            throw std::invalid_argument("ConstraintSet::project: singular metric m");
        const Mat H = m.transpose() * m;
        return project_weighted(target, m, H);
    }

    double dist_sq(const Vec& target, const Mat& m) const {
        const Vec p = project(target, m);
        const double v = (m * (p - target)).squaredNorm();
        return v < 0.0 ? 0.0 : v;
    }

    // ----- scalar fast path (d == 1) -------------------------------------
    // The weight m^2 > 0 does not change any 1-d argmin, so the projection
    // is metric-free here; dist_sq1 reapplies it.

    double project1(double t) const {
        switch (kind_) {
            case Kind::FullSpace: return t;
            case Kind::Singleton: return point_(0);
            case Kind::Box: return std::clamp(t, lower_(0), upper_(0));
            case Kind::Ball: return std::clamp(t, center_(0) - radius_, center_(0) + radius_);
            case Kind::FiniteSet: {
                double best = points_.front()(0);
                double bd = std::abs(best - t);
                for (const auto& p : points_) {
                    const double d = std::abs(p(0) - t);
                    if (d < bd || (d == bd && p(0) < best)) {
                        bd = d;
                        best = p(0);
                    }
                }
                return best;
            }
            case Kind::Union: {
                double best = members_.front().project1(t);
                double bd = std::abs(best - t);
                for (std::size_t i = 1; i < members_.size(); ++i) {
                    const double cand = members_[i].project1(t);
                    const double d = std::abs(cand - t);
                    if (d < bd || (d == bd && cand < best)) {
                        bd = d;
                        best = cand;
                    }
                }
                return best;
            }
            case Kind::Halfspace: {
                const double n = normal_(0);
                return n * t <= offset_ ? t : offset_ / n;
            }
        }
        return t;
    }

    double dist_sq1(double t, double m) const {
        const double p = project1(t);
        return m * m * (p - t) * (p - t);
    }

private:
    ConstraintSet(Kind k, int d) : kind_(k), dim_(d) {
        if (d < 1) throw std::invalid_argument("ConstraintSet: dimension must be >= 1");
    }

    void require_contains_zero() const {
        if (!contains(Vec::Zero(dim_)))
            throw std::invalid_argument("ConstraintSet: 0 must belong to the constraint set");
    }

    Vec project_weighted(const Vec& target, const Mat& m, const Mat& H) const {
        switch (kind_) {
            case Kind::FullSpace: return target;
            case Kind::Singleton: return point_;
            case Kind::Box: return project_box(target, H);
            case Kind::Ball: return project_ball(target, H);
            case Kind::FiniteSet: {
                Vec best = points_.front();
                double bd = (m * (best - target)).squaredNorm();
                for (const auto& p : points_) {
                    const double d = (m * (p - target)).squaredNorm();
                    if (d < bd || (d == bd && lex_less(p, best))) {
                        bd = d;
                        best = p;
                    }
                }
                return best;
            }
            case Kind::Union: {
                Vec best = members_.front().project_weighted(target, m, H);
                double bd = (m * (best - target)).squaredNorm();
                for (std::size_t i = 1; i < members_.size(); ++i) {
                    const Vec cand = members_[i].project_weighted(target, m, H);
                    const double d = (m * (cand - target)).squaredNorm();
                    if (d < bd || (d == bd && lex_less(cand, best))) {
                        bd = d;
                        best = cand;
                    }
                }
                return best;
            }
            case Kind::Halfspace: {
                if (normal_.dot(target) <= offset_) return target;
                const Vec Hin = H.ldlt().solve(normal_);
                return target - Hin * ((normal_.dot(target) - offset_) / normal_.dot(Hin));
            }
        }
        return target;
    }

    // Boxes under a non-diagonal metric have no closed form; cyclic
    // coordinate descent on the strictly convex quadratic converges to the
    // unique minimizer. Tolerance 1e-10 on the iterate.
    Vec project_box(const Vec& target, const Mat& H) const {
        bool diagonal = true;
        for (int i = 0; i < dim_ && diagonal; ++i)
            for (int j = 0; j < dim_; ++j)
                if (i != j && H(i, j) != 0.0) {
                    diagonal = false;
                    break;
                }
        if (diagonal || dim_ == 1)
            return target.cwiseMax(lower_).cwiseMin(upper_);

        Vec nu = target.cwiseMax(lower_).cwiseMin(upper_);
        for (int sweep = 0; sweep < 100000; ++sweep) {
            double delta = 0.0;
            for (int k = 0; k < dim_; ++k) {
                double cross = 0.0;
                for (int j = 0; j < dim_; ++j)
                    if (j != k) cross += H(k, j) * (nu(j) - target(j));
                const double cand = std::clamp(target(k) - cross / H(k, k), lower_(k), upper_(k));
                delta = std::max(delta, std::abs(cand - nu(k)));
                nu(k) = cand;
            }
            if (delta < 1e-10) break;
        }
        return nu;
    }

    // KKT for min |m(nu - t)|^2 over |nu - c| <= r: either t is feasible or
    // nu(mu) = (H + mu I)^{-1}(H t + mu c) with the multiplier mu > 0 found
    // by bisection on |nu(mu) - c| = r (monotone in mu).
    Vec project_ball(const Vec& target, const Mat& H) const {
        if ((target - center_).norm() <= radius_) return target;
        if (radius_ == 0.0) return center_;
        const Vec Ht = H * target;
        auto nu_of = [&](double mu) -> Vec {
            Mat A = H;
            for (int i = 0; i < dim_; ++i) A(i, i) += mu;
            return A.ldlt().solve(Ht + mu * center_);
        };
        double lo = 0.0, hi = 1.0;
        while ((nu_of(hi) - center_).norm() > radius_) {
            hi *= 2.0;
            if (hi > 1e18) break;
        }
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if ((nu_of(mid) - center_).norm() > radius_)
                lo = mid;
            else
                hi = mid;
        }
        return nu_of(hi);
    }

    static bool lex_less(const Vec& a, const Vec& b) {
        for (int i = 0; i < a.size(); ++i) {
            if (a(i) < b(i)) return true;
            if (a(i) > b(i)) return false;
        }
        return false;
    }

    Kind kind_;
    int dim_;
    Vec point_, lower_, upper_, center_, normal_;
    double radius_ = 0.0, offset_ = 0.0;
    std::vector<Vec> points_;
    std::vector<ConstraintSet> members_;
};

}  // namespace qbsde
