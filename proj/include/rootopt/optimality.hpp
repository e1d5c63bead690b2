#pragma once

#include "rootopt/elliptic.hpp"
#include "rootopt/irrigation.hpp"
#include "rootopt/plan_search.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace rootopt {

/// Harvest minus c times the irrigation cost of `tree`.
template <typename Scalar>
Scalar payoff(const ScalarField<Scalar>& u, const DiscreteMeasure<Scalar>& mu, const IrrigationTree<Scalar>& tree,
              Scalar c, Scalar alpha) {
    if (mu.empty()) return Scalar(0);
    return harvest(u, mu) - c * irrigation_cost(tree, mu, alpha);
}

// ================================================================
// first-order conditions
// ================================================================

template <typename Scalar>
struct AtomRecord {
    int atom;
    Vector2<Scalar> position;
    Scalar mass;
    Scalar phi;
    Scalar z;
    Scalar residual; // phi - c alpha z
};

template <typename Scalar>
struct OptimalityReport {
    std::vector<AtomRecord<Scalar>> atoms;
    Scalar sup_residual = Scalar(0);
    Scalar payoff = Scalar(0);
    Scalar harvest = Scalar(0);
    Scalar irrigation_cost = Scalar(0);
    int iteration = 0;
};

/**
 * Per-atom residual of the stationarity condition Phi = c alpha Z, with Phi =
 * (1 - psi) u* read at the atom node and Z at the atom's terminal.
 */
template <typename Scalar>
OptimalityReport<Scalar> optimality_residual(const ScalarField<Scalar>& u_star, const ScalarField<Scalar>& psi,
                                             const IrrigationTree<Scalar>& tree, const LandscapeValues<Scalar>& z,
                                             const DiscreteMeasure<Scalar>& mu, Scalar c, Scalar alpha) {
    const auto phi = phi_field(u_star, psi);
    OptimalityReport<Scalar> rep;
    for (std::size_t a = 0; a < mu.size(); ++a) {
        if (!(mu[a].mass > Scalar(0))) continue;
        const int v = tree.terminal_of(int(a));
        if (v < 0) throw ValidationError("optimality_residual: atom " + std::to_string(a) + " is missing from the tree");
        AtomRecord<Scalar> r{int(a), mu[a].position, mu[a].mass, phi.at_node(mu[a].position), z[v], Scalar(0)};
        r.residual = r.phi - c * alpha * r.z;
        rep.sup_residual = std::max(rep.sup_residual, std::abs(r.residual));
        rep.atoms.push_back(r);
    }
    rep.harvest = harvest(u_star, mu);
    rep.irrigation_cost = mu.empty() ? Scalar(0) : irrigation_cost(tree, mu, alpha);
    rep.payoff = rep.harvest - c * rep.irrigation_cost;
    return rep;
}

template <typename Scalar>
struct PathReport {
    std::size_t samples = 0;     // sample points inside the closed domain
    std::size_t violations = 0;  // samples with Phi - c alpha Z > tolerance
    Scalar max_excess = -std::numeric_limits<Scalar>::infinity();
    Scalar tolerance = Scalar(0);

    Scalar fraction_ok() const { return samples ? Scalar(samples - violations) / Scalar(samples) : Scalar(1); }
};

/**
 * Samples every tree edge at spacing <= h and compares the bilinearly
 * interpolated Phi with c alpha Z, Z being linear along an edge. Points
 * outside the domain are skipped.
 */
template <typename Scalar>
PathReport<Scalar> path_inequality_check(const ScalarField<Scalar>& u_star, const ScalarField<Scalar>& psi,
                                         const IrrigationTree<Scalar>& tree, const DiscreteMeasure<Scalar>& mu,
                                         Scalar c, Scalar alpha, Scalar tolerance) {
    const auto phi = phi_field(u_star, psi);
    const auto& g = phi.grid();
    PathReport<Scalar> rep;
    rep.tolerance = tolerance;
    if (mu.empty()) return rep;
    const auto z = landscape(tree, mu, alpha);
    for (int v = 1; v < tree.size(); ++v) {
        const int p = tree.parent(v);
        const Vector2<Scalar> a = tree.position(p), b = tree.position(v);
        const int pieces = std::max(1, int(std::ceil(double((b - a).norm() / g.h()))));
        for (int k = 0; k <= pieces; ++k) {
            const Scalar t = Scalar(k) / Scalar(pieces);
            const Vector2<Scalar> x = a + t * (b - a);
            if (!g.domain().contains_closed(x, Scalar(1e-12))) continue;
            const Scalar excess = phi.interpolate(x) - c * alpha * ((Scalar(1) - t) * z[p] + t * z[v]);
            ++rep.samples;
            rep.max_excess = std::max(rep.max_excess, excess);
            if (excess > tolerance) ++rep.violations;
        }
    }
    return rep;
}

// ================================================================
// support diagnostic
// ================================================================

template <typename Scalar>
struct SupportRow {
    Scalar cell_size;
    int cells;
    int occupied;
    Scalar fraction;
};

/// For each cell size s, the fraction of s-cells tiling the domain that contain an atom of mu.
template <typename Scalar>
std::vector<SupportRow<Scalar>> support_density_report(const DiscreteMeasure<Scalar>& mu, const Grid<Scalar>& grid,
                                                      const std::vector<Scalar>& scales) {
    const auto& d = grid.domain();
    std::vector<SupportRow<Scalar>> rows;
    for (Scalar s : scales) {
        if (!(s > Scalar(0))) throw ValidationError("support_density_report: cell sizes must be positive");
        const int cx = std::max(1, int(std::ceil(double(d.width() / s) - 1e-9)));
        const int cy = std::max(1, int(std::ceil(double(d.height() / s) - 1e-9)));
        std::vector<char> hit(std::size_t(cx) * std::size_t(cy), 0);
        for (const auto& a : mu.atoms()) {
            if (!(a.mass > Scalar(0))) continue;
            const Vector2<Scalar> q = (a.position - d.rect_min()) / s;
            const int i = std::clamp(int(std::floor(double(q.x()))), 0, cx - 1);
            const int j = std::clamp(int(std::floor(double(q.y()))), 0, cy - 1);
            hit[std::size_t(j) * std::size_t(cx) + std::size_t(i)] = 1;
        }
        int occ = 0;
        for (char h : hit) occ += h;
        rows.push_back({s, cx * cy, occ, Scalar(occ) / Scalar(cx * cy)});
    }
    return rows;
}

// ================================================================
// measure ascent
// ================================================================

template <typename Scalar>
struct TraceRecord {
    int iteration = 0;
    std::string event; // what produced this measure: "init", "mass", "spawn" or "mass+spawn"
    bool accepted = false;
    Scalar payoff{};
    Scalar sup_residual{};
    Scalar step{};
    DiscreteMeasure<Scalar> measure;
};

template <typename Scalar>
struct OptimizationTrace {
    std::vector<TraceRecord<Scalar>> records;

    int accepted_steps() const {
        int n = 0;
        for (const auto& r : records) n += r.accepted ? 1 : 0;
        return n;
    }
};

/// A measure together with its plan, state and payoff.
template <typename Scalar>
struct Snapshot {
    DiscreteMeasure<Scalar> mu;
    IrrigationTree<Scalar> tree;
    ScalarField<Scalar> u;
    Scalar harvest{};
    Scalar cost{};
    Scalar payoff{};
};

template <typename Scalar>
struct AscentResult {
    OptimizationTrace<Scalar> trace;
    Snapshot<Scalar> final_state;
    ScalarField<Scalar> psi;
    LandscapeValues<Scalar> z;
    OptimalityReport<Scalar> report;
    std::string status; // "converged", "stalled" or "budget"
};

template <typename Scalar>
PlanOptions plan_options_for(const RunConfig<Scalar>& cfg, int threads) {
    PlanOptions po;
    po.max_moves = cfg.max_plan_moves;
    po.initial_step = double(cfg.grid.h()) / 2.0;
    po.seed = cfg.seed;
    po.threads = threads;
    return po;
}

template <typename Scalar>
StateSolveOptions state_options_for(const RunConfig<Scalar>& cfg) {
    StateSolveOptions so;
    so.tolerance = double(cfg.tol_nonlinear);
    so.linear.tolerance = double(cfg.tol_linear);
    return so;
}

namespace detail {

template <typename Scalar>
DiscreteMeasure<Scalar> drop_light_atoms(const DiscreteMeasure<Scalar>& mu, Scalar threshold) {
    std::vector<Atom<Scalar>> kept;
    for (const auto& a : mu.atoms())
        if (a.mass > threshold) kept.push_back(a);
    return DiscreteMeasure<Scalar>(std::move(kept));
}

/// Carries a previous plan over to a measure on a subset/superset of its atoms.
template <typename Scalar>
std::optional<IrrigationTree<Scalar>> remap_tree(const IrrigationTree<Scalar>& old_tree,
                                                 const DiscreteMeasure<Scalar>& old_mu,
                                                 const DiscreteMeasure<Scalar>& mu) {
    IrrigationTree<Scalar> t = old_tree;
    std::vector<int> present(mu.size(), 0);
    for (int v = 1; v < t.size(); ++v) {
        auto& n = t.node(v);
        if (n.kind != NodeKind::terminal) continue;
        const auto& pos = old_mu[std::size_t(n.atom)].position;
        n.atom = -1;
        for (std::size_t a = 0; a < mu.size(); ++a)
            if ((mu[a].position - pos).norm() <= Scalar(1e-12)) {
                n.atom = int(a);
                present[a] = 1;
            }
        if (n.atom < 0) n.kind = NodeKind::steiner; // dropped atom; becomes a branch point or vanishes
    }
    normalize_tree(t, Scalar(1e-12));
    // new atoms hang off the nearest node
    for (std::size_t a = 0; a < mu.size(); ++a) {
        if (present[a] || !(mu[a].mass > Scalar(0))) continue;
        int best = 0;
        for (int v = 1; v < t.size(); ++v)
            if ((t.position(v) - mu[a].position).norm() < (t.position(best) - mu[a].position).norm()) best = v;
        t.add_terminal(mu[a].position, int(a), best);
    }
    try {
        validate_tree(t, mu);
    } catch (const ValidationError&) {
        return std::nullopt;
    }
    return t;
}

template <typename Scalar>
class Evaluator {
public:
    Evaluator(const RunConfig<Scalar>& cfg, int threads)
        : cfg_(cfg), plan_(plan_options_for(cfg, threads)), state_(state_options_for(cfg)) {}

    Snapshot<Scalar> operator()(const DiscreteMeasure<Scalar>& mu, const Snapshot<Scalar>* warm) const {
        IrrigationTree<Scalar> tree;
        Scalar cost(0);
        if (!mu.empty()) {
            std::optional<IrrigationTree<Scalar>> seed;
            if (warm && !warm->mu.empty()) seed = remap_tree(warm->tree, warm->mu, mu);
            tree = seed ? improve_plan(std::move(*seed), mu, cfg_.alpha, plan_) : optimize_plan(mu, cfg_.alpha, plan_);
            cost = irrigation_cost(tree, mu, cfg_.alpha);
        }
        auto u = solve_state(cfg_.grid, mu, cfg_.growth, state_);
        const Scalar h = harvest(u, mu);
        return {mu, std::move(tree), std::move(u), h, cost, h - cfg_.c * cost};
    }

    const StateSolveOptions& state_options() const { return state_; }

private:
    RunConfig<Scalar> cfg_;
    PlanOptions plan_;
    StateSolveOptions state_;
};

/**
 * Limited-memory BFGS for the mass step, in coordinates z = 2 sqrt(m) where
 * the plain update m + eta m r is a gradient step (grad_z = r sqrt(m)). The
 * history is discarded whenever the support changes.
 */
template <typename Scalar>
class MassQuasiNewton {
public:
    explicit MassQuasiNewton(int memory) : memory_(memory) {}

    void reset() {
        s_.clear();
        y_.clear();
        prev_.reset();
    }

    bool empty() const { return s_.empty(); }

    void observe(const DiscreteMeasure<Scalar>& mu, const VectorX<Scalar>& grad) {
        const VectorX<Scalar> z = Scalar(2) * mu.masses().cwiseSqrt();
        if (prev_ && same_support(prev_->mu, mu)) {
            const VectorX<Scalar> s = z - prev_->z;
            const VectorX<Scalar> y = prev_->grad - grad;
            if (s.dot(y) > Scalar(1e-12) * s.norm() * y.norm()) {
                s_.push_back(s);
                y_.push_back(y);
                if (int(s_.size()) > memory_) {
                    s_.erase(s_.begin());
                    y_.erase(y_.begin());
                }
            }
        } else {
            s_.clear();
            y_.clear();
        }
        prev_ = State{mu, z, grad};
    }

    /// Ascent direction in z; falls back to the gradient when the history is empty.
    VectorX<Scalar> direction(const VectorX<Scalar>& grad) const {
        if (s_.empty()) return grad;
        const std::size_t k = s_.size();
        std::vector<Scalar> a(k), rho(k);
        VectorX<Scalar> q = grad;
        for (std::size_t i = k; i-- > 0;) {
            rho[i] = Scalar(1) / s_[i].dot(y_[i]);
            a[i] = rho[i] * s_[i].dot(q);
            q -= a[i] * y_[i];
        }
        VectorX<Scalar> r = (s_.back().dot(y_.back()) / y_.back().squaredNorm()) * q;
        for (std::size_t i = 0; i < k; ++i) r += s_[i] * (a[i] - rho[i] * y_[i].dot(r));
        return r;
    }

private:
    struct State {
        DiscreteMeasure<Scalar> mu;
        VectorX<Scalar> z, grad;
    };

    static bool same_support(const DiscreteMeasure<Scalar>& a, const DiscreteMeasure<Scalar>& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i].position != b[i].position) return false;
        return true;
    }

    int memory_;
    std::vector<VectorX<Scalar>> s_, y_;
    std::optional<State> prev_;
};

/// Nearest point of the tree to x and the landscape value there (linear along edges).
template <typename Scalar>
std::pair<Scalar, Scalar> nearest_on_tree(const IrrigationTree<Scalar>& tree, const LandscapeValues<Scalar>& z,
                                          const Vector2<Scalar>& x) {
    Scalar best_d = (x - tree.position(0)).norm(), best_z(0);
    for (int v = 1; v < tree.size(); ++v) {
        const Vector2<Scalar> a = tree.position(tree.parent(v)), b = tree.position(v);
        const Vector2<Scalar> d = b - a;
        const Scalar t = std::clamp((x - a).dot(d) / d.squaredNorm(), Scalar(0), Scalar(1));
        const Scalar dist = (x - (a + t * d)).norm();
        if (dist < best_d) {
            best_d = dist;
            best_z = (Scalar(1) - t) * z[tree.parent(v)] + t * z[v];
        }
    }
    return {best_d, best_z};
}

} // namespace detail

struct AscentOptions {
    int threads = 1;
    int spawn_candidates = 4;
    int max_halvings = 20;
    bool quasi_newton = true;
    int quasi_newton_memory = 8;
};

/**
 * Mass ascent on the payoff. Each iteration replans the tree, solves the
 * state and adjoint equations and updates
 *   m_a <- max(0, m_a + eta m_a (Phi_a - c alpha Z_a)),
 * halving eta until the payoff does not decrease. Atoms lighter than
 * 1e-12 of the initial total mass are pruned. The spawn phase tries new
 * atoms at the grid nodes scoring highest on Phi - c alpha Z_ext, Z_ext
 * continuing the landscape from the nearest tree point along a straight
 * segment, and keeps one only if the payoff strictly improves.
 */
template <typename Scalar>
AscentResult<Scalar> ascend_measure(const RunConfig<Scalar>& cfg, const DiscreteMeasure<Scalar>& mu0,
                                    const AscentOptions& opt = {}) {
    cfg.validate();
    if (mu0.empty() || !(mu0.total_mass() > Scalar(0))) throw ValidationError("ascend_measure: empty initial measure");
    require_on_grid(mu0, cfg.grid);

    const detail::Evaluator<Scalar> eval(cfg, opt.threads);
    const Scalar ca = cfg.c * cfg.alpha;
    const Scalar tol = cfg.tol_optimality * cfg.growth.u_max;

    const Scalar m0 = mu0.total_mass();
    Snapshot<Scalar> cur = eval(detail::drop_light_atoms(mu0, Scalar(0)), nullptr);
    Scalar eta = cfg.step_size;
    AscentResult<Scalar> out{{}, cur, ScalarField<Scalar>(cfg.grid), {}, {}, "budget"};
    std::string event = "init";
    Scalar last_step(0);
    detail::MassQuasiNewton<Scalar> qn(opt.quasi_newton_memory);

    for (int it = 0;; ++it) {
        const auto psi = solve_adjoint(cfg.grid, cur.mu, cur.u, cfg.growth, eval.state_options());
        const auto z = landscape(cur.tree, cur.mu, cfg.alpha);
        auto rep = optimality_residual(cur.u, psi, cur.tree, z, cur.mu, cfg.c, cfg.alpha);
        rep.iteration = it;
        out.trace.records.push_back({it, event, it > 0, cur.payoff, rep.sup_residual, last_step, cur.mu});
        out.psi = psi;
        out.z = z;
        out.report = rep;
        out.final_state = cur;
        if (it >= cfg.max_outer_iters) break;
        const bool stationary = rep.sup_residual < tol;

        // mass step: m_a <- max(0, m_a + eta m_a d_a), d the residual or its quasi-Newton correction
        VectorX<Scalar> grad = VectorX<Scalar>::Zero(Eigen::Index(cur.mu.size()));
        for (const auto& r : rep.atoms) grad[r.atom] = r.residual * std::sqrt(r.mass);
        qn.observe(cur.mu, grad);
        bool moved = false;
        if (!stationary) {
            const auto try_direction = [&](const VectorX<Scalar>& d, Scalar& step) {
                for (int k = 0; k <= opt.max_halvings; ++k, step *= Scalar(0.5)) {
                    VectorX<Scalar> m = cur.mu.masses();
                    for (const auto& r : rep.atoms) m[r.atom] = std::max(Scalar(0), r.mass + step * r.mass * d[r.atom]);
                    auto next_mu = detail::drop_light_atoms(cur.mu.with_masses(m), Scalar(1e-12) * m0);
                    if (next_mu.empty()) continue;
                    auto cand = eval(next_mu, &cur);
                    if (cand.payoff >= cur.payoff) {
                        cur = std::move(cand);
                        last_step = step;
                        return true;
                    }
                }
                return false;
            };
            VectorX<Scalar> residual = VectorX<Scalar>::Zero(grad.size());
            for (const auto& r : rep.atoms) residual[r.atom] = r.residual;
            if (opt.quasi_newton && !qn.empty()) {
                const VectorX<Scalar> p = qn.direction(grad);
                if (p.dot(grad) > Scalar(0)) {
                    VectorX<Scalar> d = VectorX<Scalar>::Zero(grad.size());
                    for (const auto& r : rep.atoms) d[r.atom] = p[r.atom] / std::sqrt(r.mass);
                    Scalar step(1);
                    moved = try_direction(d, step);
                }
                if (!moved) qn.reset();
            }
            if (!moved) {
                Scalar step = eta;
                moved = try_direction(residual, step);
                eta = moved ? std::min(step * Scalar(2), cfg.step_size * Scalar(1024)) : cfg.step_size;
            }
        }

        // spawn
        bool spawned = false;
        if (cfg.spawn) {
            const auto& phi_psi = moved ? solve_adjoint(cfg.grid, cur.mu, cur.u, cfg.growth, eval.state_options()) : psi;
            const auto phi = phi_field(cur.u, phi_psi);
            const auto zc = landscape(cur.tree, cur.mu, cfg.alpha);
            const Scalar trial = cfg.spawn_trial_fraction * cur.mu.total_mass() / Scalar(cur.mu.size());
            std::vector<char> occupied(std::size_t(cfg.grid.size()), 0);
            for (const auto& a : cur.mu.atoms()) occupied[std::size_t(*cfg.grid.locate(a.position))] = 1;
            std::vector<std::pair<Scalar, int>> scored;
            for (int k = 0; k < cfg.grid.size(); ++k) {
                if (occupied[std::size_t(k)]) continue;
                const auto [dist, zp] = detail::nearest_on_tree(cur.tree, zc, cfg.grid.node(k));
                const Scalar zext = zp + std::pow(trial, cfg.alpha - Scalar(1)) * dist;
                const Scalar score = phi[k] - ca * zext;
                if (score > Scalar(0)) scored.push_back({-score, k});
            }
            std::stable_sort(scored.begin(), scored.end());
            if (scored.size() > std::size_t(opt.spawn_candidates)) scored.resize(std::size_t(opt.spawn_candidates));
            std::vector<std::optional<Snapshot<Scalar>>> trials(scored.size());
            parallel_for(scored.size(), opt.threads, [&](std::size_t s) {
                auto atoms = cur.mu.atoms();
                atoms.push_back({cfg.grid.node(scored[s].second), trial});
                trials[s] = eval(DiscreteMeasure<Scalar>(std::move(atoms)), &cur);
            });
            std::size_t best = trials.size();
            for (std::size_t s = 0; s < trials.size(); ++s)
                if (trials[s]->payoff > cur.payoff &&
                    (best == trials.size() || trials[s]->payoff > trials[best]->payoff))
                    best = s;
            if (best < trials.size()) {
                cur = std::move(*trials[best]);
                spawned = true;
            }
        }

        if (moved || spawned) {
            event = moved && spawned ? "mass+spawn" : moved ? "mass" : "spawn";
            if (!moved) last_step = Scalar(0);
            continue;
        }
        out.status = stationary ? "converged" : "stalled";
        break;
    }
    return out;
}

using OptimalityReportd = OptimalityReport<double>;
using OptimizationTraced = OptimizationTrace<double>;

} // namespace rootopt
