#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rootopt {

template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// ================================================================
// errors
// ================================================================

/// Invalid input or a violated invariant (CLI exit status 1).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical solver failed to converge (CLI exit status 2).
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, double last_residual)
        : std::runtime_error(what + " (last residual " + format_residual(last_residual) + ")"),
          last_residual_(last_residual) {}

    double last_residual() const { return last_residual_; }

private:
    static std::string format_residual(double r) {
        std::ostringstream os;
        os << r;
        return os.str();
    }

    double last_residual_;
};

/// max(1, |x|), the scale used in relative tolerances.
template <typename Scalar>
Scalar tolerance_scale(Scalar x) {
    return std::max(Scalar(1), std::abs(x));
}

// ================================================================
// Domain
// ================================================================

/**
 * Open rectangle Omega = (rect_min, rect_max) with the irrigation source at
 * the origin, which must lie outside the closed rectangle.
 */
template <typename Scalar>
class Domain {
public:
    Domain(const Vector2<Scalar>& rect_min, const Vector2<Scalar>& rect_max)
        : rect_min_(rect_min), rect_max_(rect_max), origin_(Vector2<Scalar>::Zero()) {
        if (!(rect_min_.x() < rect_max_.x() && rect_min_.y() < rect_max_.y()))
            throw ValidationError("domain: rect_min must be < rect_max componentwise");
        if (!(distance_to_origin() > Scalar(0)))
            throw ValidationError("domain: origin must lie strictly outside the closed rectangle");
    }

    /// Default rectangle [0.5, 1.5] x [-0.5, 0.5].
    static Domain standard() { return Domain({Scalar(0.5), Scalar(-0.5)}, {Scalar(1.5), Scalar(0.5)}); }

    const Vector2<Scalar>& rect_min() const { return rect_min_; }
    const Vector2<Scalar>& rect_max() const { return rect_max_; }
    const Vector2<Scalar>& origin() const { return origin_; }

    Scalar width() const { return rect_max_.x() - rect_min_.x(); }
    Scalar height() const { return rect_max_.y() - rect_min_.y(); }

    /// r0 = dist(origin, closure of Omega).
    Scalar distance_to_origin() const {
        const Vector2<Scalar> nearest = origin_.cwiseMax(rect_min_).cwiseMin(rect_max_);
        return (nearest - origin_).norm();
    }

    bool contains_closed(const Vector2<Scalar>& p, Scalar tol = Scalar(0)) const {
        return p.x() >= rect_min_.x() - tol && p.x() <= rect_max_.x() + tol && p.y() >= rect_min_.y() - tol &&
               p.y() <= rect_max_.y() + tol;
    }

    bool operator==(const Domain& o) const { return rect_min_ == o.rect_min_ && rect_max_ == o.rect_max_; }

private:
    Vector2<Scalar> rect_min_;
    Vector2<Scalar> rect_max_;
    Vector2<Scalar> origin_;
};

// ================================================================
// Grid
// ================================================================

/**
 * Uniform node-centred grid on the closed rectangle. Node (i, j) sits at
 * rect_min + h (i, j); storage is row-major, index = j * nx + i.
 */
template <typename Scalar>
class Grid {
public:
    Grid(const Domain<Scalar>& domain, int nx, int ny) : domain_(domain), nx_(nx), ny_(ny) {
        if (nx < 3 || ny < 3) throw ValidationError("grid: nx and ny must be >= 3");
        h_ = domain.width() / Scalar(nx - 1);
        const Scalar hy = domain.height() / Scalar(ny - 1);
        if (std::abs(h_ - hy) > Scalar(1e-12) * tolerance_scale(h_))
            throw ValidationError("grid: x and y spacings differ (" + std::to_string(double(h_)) + " vs " +
                                  std::to_string(double(hy)) + ")");
    }

    /// Grid with nx nodes across; ny is chosen to match the spacing.
    static Grid with_nx(const Domain<Scalar>& domain, int nx) {
        const Scalar h = domain.width() / Scalar(nx - 1);
        const int ny = int(std::lround(domain.height() / h)) + 1;
        return Grid(domain, nx, ny);
    }

    const Domain<Scalar>& domain() const { return domain_; }
    int nx() const { return nx_; }
    int ny() const { return ny_; }
    Scalar h() const { return h_; }
    int size() const { return nx_ * ny_; }

    int index(int i, int j) const { return j * nx_ + i; }
    int col(int k) const { return k % nx_; }
    int row(int k) const { return k / nx_; }

    Vector2<Scalar> node(int i, int j) const {
        return domain_.rect_min() + h_ * Vector2<Scalar>(Scalar(i), Scalar(j));
    }
    Vector2<Scalar> node(int k) const { return node(col(k), row(k)); }

    /// Node index whose position coincides with p (within 1e-9 h), if any.
    std::optional<int> locate(const Vector2<Scalar>& p) const {
        const Vector2<Scalar> s = (p - domain_.rect_min()) / h_;
        const long i = std::lround(double(s.x()));
        const long j = std::lround(double(s.y()));
        if (i < 0 || j < 0 || i >= nx_ || j >= ny_) return std::nullopt;
        if ((node(int(i), int(j)) - p).norm() > Scalar(1e-9) * h_) return std::nullopt;
        return index(int(i), int(j));
    }

    /// Nearest node index (clamped into the grid).
    int nearest(const Vector2<Scalar>& p) const {
        const Vector2<Scalar> s = (p - domain_.rect_min()) / h_;
        const int i = std::clamp(int(std::lround(double(s.x()))), 0, nx_ - 1);
        const int j = std::clamp(int(std::lround(double(s.y()))), 0, ny_ - 1);
        return index(i, j);
    }

    /// Control-volume fraction of node k: 1 inside, 1/2 on an edge, 1/4 at a corner.
    Scalar cell_fraction(int k) const {
        const int i = col(k), j = row(k);
        Scalar w(1);
        if (i == 0 || i == nx_ - 1) w *= Scalar(0.5);
        if (j == 0 || j == ny_ - 1) w *= Scalar(0.5);
        return w;
    }

    bool operator==(const Grid& o) const { return domain_ == o.domain_ && nx_ == o.nx_ && ny_ == o.ny_; }
    bool operator!=(const Grid& o) const { return !(*this == o); }

private:
    Domain<Scalar> domain_;
    int nx_;
    int ny_;
    Scalar h_;
};

// ================================================================
// measures
// ================================================================

template <typename Scalar>
struct Atom {
    Vector2<Scalar> position;
    Scalar mass;
};

/// Finitely many nonnegative point masses with pairwise distinct positions.
template <typename Scalar>
class DiscreteMeasure {
public:
    DiscreteMeasure() = default;

    explicit DiscreteMeasure(std::vector<Atom<Scalar>> atoms) : atoms_(std::move(atoms)) {
        for (std::size_t a = 0; a < atoms_.size(); ++a) {
            if (!(atoms_[a].mass >= Scalar(0)) || !std::isfinite(double(atoms_[a].mass)))
                throw ValidationError("measure: atom " + std::to_string(a) + " has negative or non-finite mass");
            for (std::size_t b = 0; b < a; ++b)
                if ((atoms_[a].position - atoms_[b].position).norm() <= Scalar(1e-12))
                    throw ValidationError("measure: atoms " + std::to_string(b) + " and " + std::to_string(a) +
                                          " share a position");
        }
    }

    const std::vector<Atom<Scalar>>& atoms() const { return atoms_; }
    const Atom<Scalar>& operator[](std::size_t a) const { return atoms_[a]; }
    std::size_t size() const { return atoms_.size(); }
    bool empty() const { return atoms_.empty(); }

    Scalar total_mass() const {
        Scalar m(0);
        for (const auto& a : atoms_) m += a.mass;
        return m;
    }

    VectorX<Scalar> masses() const {
        VectorX<Scalar> m(Eigen::Index(atoms_.size()));
        for (std::size_t a = 0; a < atoms_.size(); ++a) m[Eigen::Index(a)] = atoms_[a].mass;
        return m;
    }

    /// Same positions, new masses.
    DiscreteMeasure with_masses(const VectorX<Scalar>& m) const {
        if (std::size_t(m.size()) != atoms_.size()) throw ValidationError("measure: mass vector size mismatch");
        auto atoms = atoms_;
        for (std::size_t a = 0; a < atoms.size(); ++a) atoms[a].mass = m[Eigen::Index(a)];
        return DiscreteMeasure(std::move(atoms));
    }

    /// Mass of atoms with |x| >= r.
    Scalar mass_outside(Scalar r) const {
        Scalar m(0);
        for (const auto& a : atoms_)
            if (a.position.norm() >= r) m += a.mass;
        return m;
    }

private:
    std::vector<Atom<Scalar>> atoms_;
};

template <typename Scalar>
Scalar total_mass(const DiscreteMeasure<Scalar>& mu) {
    return mu.total_mass();
}

/// Every atom sits on a grid node inside the closed domain.
template <typename Scalar>
void require_on_grid(const DiscreteMeasure<Scalar>& mu, const Grid<Scalar>& grid) {
    for (std::size_t a = 0; a < mu.size(); ++a)
        if (!grid.locate(mu[a].position))
            throw ValidationError("measure: atom " + std::to_string(a) + " is not on a grid node");
}

/**
 * Mass bound implied by the radial lower bound on the irrigation cost:
 * M <= (cost / r0)^(1/alpha).
 */
template <typename Scalar>
bool mass_bound_check(const DiscreteMeasure<Scalar>& mu, Scalar irrigation_cost, const Domain<Scalar>& domain,
                      Scalar alpha) {
    if (irrigation_cost < Scalar(0)) throw ValidationError("mass_bound_check: negative irrigation cost");
    const Scalar r0 = domain.distance_to_origin();
    if (!(r0 > Scalar(0))) throw ValidationError("mass_bound_check: domain touches the origin");
    const Scalar bound = std::pow(irrigation_cost / r0, Scalar(1) / alpha);
    const Scalar m = mu.total_mass();
    return m <= bound + Scalar(1e-9) * tolerance_scale(bound);
}

// ================================================================
// growth function
// ================================================================

/// Logistic source f(u) = rate u (1 - u / u_max).
template <typename Scalar>
struct GrowthFunction {
    Scalar u_max = Scalar(1);
    Scalar rate = Scalar(4);

    GrowthFunction() = default;
    GrowthFunction(Scalar u_max_, Scalar rate_) : u_max(u_max_), rate(rate_) {
        if (!(u_max > Scalar(0)) || !(rate > Scalar(0)))
            throw ValidationError("growth: u_max and rate must be positive");
    }

    Scalar operator()(Scalar u) const { return rate * u * (Scalar(1) - u / u_max); }
    Scalar derivative(Scalar u) const { return rate * (Scalar(1) - Scalar(2) * u / u_max); }
    Scalar second_derivative(Scalar) const { return -Scalar(2) * rate / u_max; }
    /// K = max of f on [0, u_max].
    Scalar bound() const { return rate * u_max / Scalar(4); }
    /// max |f'| on [0, u_max].
    Scalar lipschitz() const { return rate; }
};

// ================================================================
// run configuration
// ================================================================

template <typename Scalar>
struct RunConfig {
    Scalar alpha = Scalar(0.75);
    Scalar c = Scalar(0.2);
    Grid<Scalar> grid = Grid<Scalar>(Domain<Scalar>::standard(), 33, 33);
    GrowthFunction<Scalar> growth{};
    Scalar tol_nonlinear = Scalar(1e-10);
    Scalar tol_linear = Scalar(1e-12);
    int max_outer_iters = 200;
    int max_plan_moves = 200;
    Scalar step_size = Scalar(1);
    std::uint64_t seed = 0;

    // outer loop
    Scalar tol_optimality = Scalar(1e-6); // relative to u_max
    bool spawn = true;
    Scalar spawn_trial_fraction = Scalar(0.05); // trial mass as a fraction of the mean atom mass
    Scalar path_tolerance = Scalar(1e-3);       // relative to u_max

    void validate() const {
        if (!(alpha > Scalar(0) && alpha < Scalar(1))) throw ValidationError("config: alpha must lie in (0,1)");
        if (!(c > Scalar(0))) throw ValidationError("config: c must be positive");
        if (!(tol_nonlinear > Scalar(0)) || !(tol_linear > Scalar(0)))
            throw ValidationError("config: tolerances must be positive");
        if (max_outer_iters <= 0 || max_plan_moves <= 0)
            throw ValidationError("config: iteration budgets must be positive");
        if (!(step_size > Scalar(0))) throw ValidationError("config: step_size must be positive");
    }
};

using Vector2d = Vector2<double>;
using Domaind = Domain<double>;
using Gridd = Grid<double>;
using Atomd = Atom<double>;
using DiscreteMeasured = DiscreteMeasure<double>;
using GrowthFunctiond = GrowthFunction<double>;
using RunConfigd = RunConfig<double>;

} // namespace rootopt
