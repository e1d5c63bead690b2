#pragma once

#include "rootopt/core.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <limits>
#include <string>
#include <vector>

namespace rootopt {

template <typename Scalar>
using SparseMatrix = Eigen::SparseMatrix<Scalar>;

// ================================================================
// fields and lumped measures
// ================================================================

/// Nodal values on a grid, stored row-major like the grid itself.
template <typename Scalar>
class ScalarField {
public:
    explicit ScalarField(const Grid<Scalar>& grid, Scalar value = Scalar(0))
        : grid_(grid), values_(VectorX<Scalar>::Constant(grid.size(), value)) {}

    ScalarField(const Grid<Scalar>& grid, VectorX<Scalar> values) : grid_(grid), values_(std::move(values)) {
        if (values_.size() != grid_.size()) throw ValidationError("field: value count does not match grid");
        if (!values_.allFinite()) throw ValidationError("field: non-finite values");
    }

    template <typename Fn>
    static ScalarField sample(const Grid<Scalar>& grid, Fn&& fn) {
        VectorX<Scalar> v(grid.size());
        for (int k = 0; k < grid.size(); ++k) v[k] = fn(grid.node(k));
        return ScalarField(grid, std::move(v));
    }

    const Grid<Scalar>& grid() const { return grid_; }
    const VectorX<Scalar>& values() const { return values_; }
    Scalar operator[](int k) const { return values_[k]; }
    Scalar at(int i, int j) const { return values_[grid_.index(i, j)]; }

    Scalar min() const { return values_.minCoeff(); }
    Scalar max() const { return values_.maxCoeff(); }

    /// Value at the node coinciding with p; p must be a grid node.
    Scalar at_node(const Vector2<Scalar>& p) const {
        const auto k = grid_.locate(p);
        if (!k) throw ValidationError("field: point is not a grid node");
        return values_[*k];
    }

    /// Bilinear interpolation; p is clamped into the closed rectangle.
    Scalar interpolate(const Vector2<Scalar>& p) const {
        const Vector2<Scalar> s = (p - grid_.domain().rect_min()) / grid_.h();
        const Scalar x = std::clamp(s.x(), Scalar(0), Scalar(grid_.nx() - 1));
        const Scalar y = std::clamp(s.y(), Scalar(0), Scalar(grid_.ny() - 1));
        const int i = std::min(int(x), grid_.nx() - 2);
        const int j = std::min(int(y), grid_.ny() - 2);
        const Scalar tx = x - Scalar(i), ty = y - Scalar(j);
        return (Scalar(1) - tx) * (Scalar(1) - ty) * at(i, j) + tx * (Scalar(1) - ty) * at(i + 1, j) +
               (Scalar(1) - tx) * ty * at(i, j + 1) + tx * ty * at(i + 1, j + 1);
    }

private:
    Grid<Scalar> grid_;
    VectorX<Scalar> values_;
};

template <typename Scalar>
void require_same_grid(const ScalarField<Scalar>& a, const ScalarField<Scalar>& b) {
    if (a.grid() != b.grid()) throw ValidationError("fields live on different grids");
}

/// Atom masses collected at their grid nodes.
template <typename Scalar>
struct NodalMeasure {
    Grid<Scalar> grid;
    VectorX<Scalar> weights;

    Scalar total() const { return weights.sum(); }

    /// Density seen by the finite-difference operator: weight / control-volume area.
    VectorX<Scalar> density() const {
        VectorX<Scalar> rho(grid.size());
        const Scalar h2 = grid.h() * grid.h();
        for (int k = 0; k < grid.size(); ++k) rho[k] = weights[k] / (h2 * grid.cell_fraction(k));
        return rho;
    }
};

template <typename Scalar>
NodalMeasure<Scalar> lump_measure(const DiscreteMeasure<Scalar>& mu, const Grid<Scalar>& grid) {
    NodalMeasure<Scalar> nm{grid, VectorX<Scalar>::Zero(grid.size())};
    for (std::size_t a = 0; a < mu.size(); ++a) {
        const auto k = grid.locate(mu[a].position);
        if (!k) throw ValidationError("lump_measure: atom " + std::to_string(a) + " is not on a grid node");
        nm.weights[*k] += mu[a].mass;
    }
    return nm;
}

// ================================================================
// discrete operators
// ================================================================

/**
 * Symmetric form of -h^2 D Delta_h with Neumann ghost-node reflection, where
 * D holds the control-volume fractions. Equivalently a graph Laplacian whose
 * links have weight 1, or 1/2 when the link runs along the boundary. Rows sum
 * to zero.
 */
template <typename Scalar>
SparseMatrix<Scalar> neumann_stiffness(const Grid<Scalar>& g) {
    std::vector<Eigen::Triplet<Scalar>> trip;
    trip.reserve(std::size_t(g.size()) * 5);
    auto link = [&](int a, int b, Scalar w) {
        trip.emplace_back(a, a, w);
        trip.emplace_back(b, b, w);
        trip.emplace_back(a, b, -w);
        trip.emplace_back(b, a, -w);
    };
    for (int j = 0; j < g.ny(); ++j)
        for (int i = 0; i < g.nx(); ++i) {
            if (i + 1 < g.nx()) link(g.index(i, j), g.index(i + 1, j), (j == 0 || j == g.ny() - 1) ? Scalar(0.5) : Scalar(1));
            if (j + 1 < g.ny()) link(g.index(i, j), g.index(i, j + 1), (i == 0 || i == g.nx() - 1) ? Scalar(0.5) : Scalar(1));
        }
    SparseMatrix<Scalar> s(g.size(), g.size());
    s.setFromTriplets(trip.begin(), trip.end());
    return s;
}

/// h^2 times the control-volume fractions, i.e. the lumped mass matrix diagonal.
template <typename Scalar>
VectorX<Scalar> lumped_area(const Grid<Scalar>& g) {
    VectorX<Scalar> a(g.size());
    const Scalar h2 = g.h() * g.h();
    for (int k = 0; k < g.size(); ++k) a[k] = h2 * g.cell_fraction(k);
    return a;
}

/// Delta_h u with mirrored ghost nodes (the strong, unsymmetrized form).
template <typename Scalar>
VectorX<Scalar> laplacian(const Grid<Scalar>& g, const SparseMatrix<Scalar>& stiffness, const VectorX<Scalar>& u) {
    return -(stiffness * u).cwiseQuotient(lumped_area(g));
}

template <typename Scalar>
SparseMatrix<Scalar> add_diagonal(SparseMatrix<Scalar> a, const VectorX<Scalar>& d) {
    for (int k = 0; k < a.rows(); ++k) a.coeffRef(k, k) += d[k];
    return a;
}

struct LinearSolveOptions {
    double tolerance = 1e-12;
    int max_iterations = 0; // 0: 10 n
};

/**
 * Symmetric system solve: diagonally preconditioned conjugate gradients,
 * falling back to a sparse LDL^T factorization when CG fails (indefinite
 * Jacobians away from the maximal solution).
 */
template <typename Scalar>
VectorX<Scalar> solve_symmetric(const SparseMatrix<Scalar>& a, const VectorX<Scalar>& b, const VectorX<Scalar>& guess,
                                const LinearSolveOptions& opt, const char* what) {
    Eigen::ConjugateGradient<SparseMatrix<Scalar>, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<Scalar>> cg;
    cg.setTolerance(Scalar(opt.tolerance));
    cg.setMaxIterations(opt.max_iterations > 0 ? opt.max_iterations : 10 * int(a.rows()));
    cg.compute(a);
    VectorX<Scalar> x = cg.solveWithGuess(b, guess);
    if (cg.info() == Eigen::Success && x.allFinite()) return x;

    Eigen::SimplicialLDLT<SparseMatrix<Scalar>> ldlt(a);
    if (ldlt.info() == Eigen::Success) {
        x = ldlt.solve(b);
        if (ldlt.info() == Eigen::Success && x.allFinite()) return x;
    }
    throw SolverError(std::string(what) + ": linear solve failed", double(cg.error()));
}

/**
 * Solves Delta_h u - m u = F with homogeneous Neumann conditions for a
 * nonnegative density m that is not identically zero.
 */
template <typename Scalar>
ScalarField<Scalar> solve_screened(const ScalarField<Scalar>& density, const ScalarField<Scalar>& rhs,
                                   const LinearSolveOptions& opt = {}) {
    require_same_grid(density, rhs);
    const auto& g = density.grid();
    if (density.min() < Scalar(0) || !(density.max() > Scalar(0)))
        throw ValidationError("solve_screened: density must be nonnegative and not identically zero");
    const VectorX<Scalar> area = lumped_area(g);
    const auto a = add_diagonal(neumann_stiffness(g), VectorX<Scalar>(area.cwiseProduct(density.values())));
    const VectorX<Scalar> b = -area.cwiseProduct(rhs.values());
    return ScalarField<Scalar>(g, solve_symmetric(a, b, VectorX<Scalar>::Zero(g.size()).eval(), opt, "solve_screened"));
}

// ================================================================
// state equation
// ================================================================

struct StateSolveOptions {
    double tolerance = 1e-10;
    LinearSolveOptions linear{};
    int max_picard = 2000;
    int max_newton = 100;
};

template <typename Scalar>
struct StateSolution {
    ScalarField<Scalar> u;
    Scalar residual;   // max nodal residual
    int picard_iterations;
    int newton_iterations;
};

/// Nodal residual Delta_h u + f(u) - rho u.
template <typename Scalar>
VectorX<Scalar> state_residual(const Grid<Scalar>& g, const SparseMatrix<Scalar>& stiffness, const VectorX<Scalar>& rho,
                               const GrowthFunction<Scalar>& f, const VectorX<Scalar>& u) {
    VectorX<Scalar> r = laplacian(g, stiffness, u) - rho.cwiseProduct(u);
    for (Eigen::Index k = 0; k < u.size(); ++k) r[k] += f(u[k]);
    return r;
}

/// Scale for nodal residuals: max(1, K, max rho * u_max).
template <typename Scalar>
Scalar state_residual_scale(const VectorX<Scalar>& rho, const GrowthFunction<Scalar>& f) {
    const Scalar rmax = rho.size() ? rho.maxCoeff() : Scalar(0);
    return std::max({Scalar(1), f.bound(), rmax * f.u_max});
}

/**
 * Maximal solution of Delta u + f(u) - u mu = 0 with Neumann conditions.
 * Shifted Picard iteration from the supersolution u = u_max,
 *   (-Delta_h + rho + sigma) u_{k+1} = f(u_k) + sigma u_k,  sigma = max|f'|,
 * which decreases monotonically to the maximal solution; when a sweep cuts
 * the residual by less than 1 % the iteration switches to damped Newton.
 */
template <typename Scalar>
StateSolution<Scalar> solve_state_detailed(const Grid<Scalar>& g, const DiscreteMeasure<Scalar>& mu,
                                           const GrowthFunction<Scalar>& f, const StateSolveOptions& opt = {}) {
    const auto nm = lump_measure(mu, g);
    const VectorX<Scalar> rho = nm.density();
    const VectorX<Scalar> area = lumped_area(g);
    const auto stiff = neumann_stiffness(g);
    const Scalar scale = state_residual_scale(rho, f);
    const Scalar tol = Scalar(opt.tolerance) * scale;
    const Scalar sigma = f.lipschitz();

    VectorX<Scalar> u = VectorX<Scalar>::Constant(g.size(), f.u_max);
    VectorX<Scalar> r = state_residual(g, stiff, rho, f, u);
    Scalar res = r.template lpNorm<Eigen::Infinity>();
    int picard = 0, newton = 0;

    const auto picard_matrix = add_diagonal(stiff, VectorX<Scalar>(nm.weights + sigma * area));
    while (res > tol && picard < opt.max_picard) {
        VectorX<Scalar> rhs(g.size());
        for (int k = 0; k < g.size(); ++k) rhs[k] = area[k] * (f(u[k]) + sigma * u[k]);
        u = solve_symmetric(picard_matrix, rhs, u, opt.linear, "solve_state");
        ++picard;
        r = state_residual(g, stiff, rho, f, u);
        const Scalar next = r.template lpNorm<Eigen::Infinity>();
        const bool stalled = next > Scalar(0.99) * res;
        res = next;
        if (stalled) break;
    }

    while (res > tol && newton < opt.max_newton) {
        VectorX<Scalar> jd(g.size());
        for (int k = 0; k < g.size(); ++k) jd[k] = nm.weights[k] - area[k] * f.derivative(u[k]);
        const auto jac = add_diagonal(stiff, jd);
        const VectorX<Scalar> step =
            solve_symmetric(jac, VectorX<Scalar>(area.cwiseProduct(r)), VectorX<Scalar>::Zero(g.size()).eval(),
                            opt.linear, "solve_state (newton)");
        Scalar t(1);
        VectorX<Scalar> trial, rt;
        Scalar trial_res = std::numeric_limits<Scalar>::infinity();
        for (int ls = 0; ls < 30; ++ls, t *= Scalar(0.5)) {
            trial = u + t * step;
            rt = state_residual(g, stiff, rho, f, trial);
            trial_res = rt.template lpNorm<Eigen::Infinity>();
            if (trial_res < (Scalar(1) - Scalar(1e-4) * t) * res) break;
        }
        ++newton;
        if (!(trial_res < res)) break;
        u = trial;
        r = rt;
        res = trial_res;
    }

    if (!(res <= tol)) throw SolverError("solve_state: no convergence", double(res / scale));
    return {ScalarField<Scalar>(g, std::move(u)), res / scale, picard, newton};
}

template <typename Scalar>
ScalarField<Scalar> solve_state(const Grid<Scalar>& g, const DiscreteMeasure<Scalar>& mu,
                                const GrowthFunction<Scalar>& f, const StateSolveOptions& opt = {}) {
    return solve_state_detailed(g, mu, f, opt).u;
}

/// Total harvest: sum over atoms of mass * u(atom).
template <typename Scalar>
Scalar harvest(const ScalarField<Scalar>& u, const DiscreteMeasure<Scalar>& mu) {
    Scalar h(0);
    for (const auto& a : mu.atoms()) h += a.mass * u.at_node(a.position);
    return h;
}

// ================================================================
// adjoint
// ================================================================

/**
 * Smallest lambda >= 0 with f'(u) (lambda u + 1) < lambda f(u) on
 * [delta0, u_max], found by bisection on the sampled condition.
 */
template <typename Scalar>
Scalar adjoint_bound_lambda(const GrowthFunction<Scalar>& f, Scalar delta0, int samples = 4001) {
    if (!(delta0 > Scalar(0) && delta0 <= f.u_max))
        throw ValidationError("adjoint_bound_lambda: delta0 must lie in (0, u_max]");
    auto holds = [&](Scalar lambda) {
        for (int s = 0; s < samples; ++s) {
            const Scalar u = delta0 + (f.u_max - delta0) * Scalar(s) / Scalar(samples - 1);
            if (!(f.derivative(u) * (lambda * u + Scalar(1)) < lambda * f(u))) return false;
        }
        return true;
    };
    if (holds(Scalar(0))) return Scalar(0);
    Scalar lo(0), hi(1);
    while (!holds(hi)) {
        lo = hi;
        hi *= Scalar(2);
        if (hi > Scalar(1e300)) throw SolverError("adjoint_bound_lambda: no admissible lambda", double(hi));
    }
    for (int it = 0; it < 200 && hi - lo > Scalar(1e-15) * hi; ++it) {
        const Scalar mid = Scalar(0.5) * (lo + hi);
        (holds(mid) ? hi : lo) = mid;
    }
    return hi;
}

/// Solves Delta psi + f'(u*) psi - psi mu = -mu with Neumann conditions.
template <typename Scalar>
ScalarField<Scalar> solve_adjoint(const Grid<Scalar>& g, const DiscreteMeasure<Scalar>& mu,
                                  const ScalarField<Scalar>& u_star, const GrowthFunction<Scalar>& f,
                                  const StateSolveOptions& opt = {}) {
    if (u_star.grid() != g) throw ValidationError("solve_adjoint: state lives on a different grid");
    const auto nm = lump_measure(mu, g);
    const VectorX<Scalar> area = lumped_area(g);
    const auto stiff = neumann_stiffness(g);
    VectorX<Scalar> d(g.size());
    for (int k = 0; k < g.size(); ++k) d[k] = nm.weights[k] - area[k] * f.derivative(u_star[k]);
    const auto a = add_diagonal(stiff, d);
    VectorX<Scalar> psi =
        solve_symmetric(a, nm.weights, VectorX<Scalar>::Zero(g.size()).eval(), opt.linear, "solve_adjoint");

    const VectorX<Scalar> rho = nm.density();
    VectorX<Scalar> r = laplacian(g, stiff, psi) - rho.cwiseProduct(psi) + rho;
    for (int k = 0; k < g.size(); ++k) r[k] += f.derivative(u_star[k]) * psi[k];
    const Scalar scale = std::max({Scalar(1), rho.maxCoeff() * std::max(Scalar(1), psi.cwiseAbs().maxCoeff()),
                                   f.lipschitz() * psi.cwiseAbs().maxCoeff()});
    const Scalar res = r.template lpNorm<Eigen::Infinity>() / scale;
    if (!(res <= Scalar(opt.tolerance))) throw SolverError("solve_adjoint: residual too large", double(res));
    return ScalarField<Scalar>(g, std::move(psi));
}

/// Phi = (1 - psi) u*, the harvest gained per unit of added root mass.
template <typename Scalar>
ScalarField<Scalar> phi_field(const ScalarField<Scalar>& u_star, const ScalarField<Scalar>& psi) {
    require_same_grid(u_star, psi);
    return ScalarField<Scalar>(u_star.grid(),
                               VectorX<Scalar>((VectorX<Scalar>::Ones(psi.values().size()) - psi.values())
                                                   .cwiseProduct(u_star.values())));
}

/// Harvest derivative along nu = g mu: sum_a mass_a g_a Phi(atom_a).
template <typename Scalar>
Scalar perturbation_derivative(const ScalarField<Scalar>& u_star, const ScalarField<Scalar>& psi,
                               const VectorX<Scalar>& direction, const DiscreteMeasure<Scalar>& mu) {
    if (std::size_t(direction.size()) != mu.size()) throw ValidationError("perturbation_derivative: size mismatch");
    if (direction.size() && direction.cwiseAbs().maxCoeff() > Scalar(1))
        throw ValidationError("perturbation_derivative: |g| must be <= 1");
    const auto phi = phi_field(u_star, psi);
    Scalar d(0);
    for (std::size_t a = 0; a < mu.size(); ++a) d += mu[a].mass * direction[Eigen::Index(a)] * phi.at_node(mu[a].position);
    return d;
}

using ScalarFieldd = ScalarField<double>;
using NodalMeasured = NodalMeasure<double>;

} // namespace rootopt
