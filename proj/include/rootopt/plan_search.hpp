#pragma once

#include "rootopt/irrigation.hpp"
#include "rootopt/parallel.hpp"

#include <Eigen/Cholesky>

#include <limits>
#include <memory>
#include <random>
#include <unordered_map>

namespace rootopt {

// ================================================================
// tree clean-up
// ================================================================

/**
 * Drops childless steiner nodes, splices out steiner nodes with a single
 * child, and contracts steiner nodes lying within `tol` of their parent or of
 * one of their children.
 */
template <typename Scalar>
void normalize_tree(IrrigationTree<Scalar>& tree, Scalar tol) {
    for (bool changed = true; changed;) {
        changed = false;
        const auto ch = tree.children();
        for (int v = 1; v < tree.size() && !changed; ++v) {
            if (tree.node(v).kind != NodeKind::steiner) continue;
            const auto& kids = ch[std::size_t(v)];
            const int p = tree.parent(v);
            if (kids.size() <= 1 || (tree.position(v) - tree.position(p)).norm() <= tol) {
                for (int c : kids) tree.set_parent(c, p);
                changed = true;
            } else {
                for (int c : kids) {
                    if ((tree.position(v) - tree.position(c)).norm() > tol) continue;
                    tree.set_parent(c, p);
                    for (int o : kids)
                        if (o != c) tree.set_parent(o, c);
                    changed = true;
                    break;
                }
            }
            if (changed) tree.erase_leaf(v);
        }
    }
}

// ================================================================
// steiner relocation: derivative-free compass search
// ================================================================

namespace detail {

template <typename Scalar>
struct Spoke {
    Vector2<Scalar> q;
    Scalar w;
};

template <typename Scalar>
Scalar star_cost(const Vector2<Scalar>& p, const std::vector<Spoke<Scalar>>& spokes) {
    Scalar s(0);
    for (const auto& sp : spokes) s += sp.w * (p - sp.q).norm();
    return s;
}

/// Weighted spokes of node v: its parent edge and child edges, weight flux^alpha.
template <typename Scalar>
std::vector<Spoke<Scalar>> spokes_of(const IrrigationTree<Scalar>& tree, const std::vector<std::vector<int>>& ch,
                                     const FluxMap<Scalar>& fm, Scalar alpha, int v) {
    std::vector<Spoke<Scalar>> s;
    s.push_back({tree.position(tree.parent(v)), std::pow(fm[v], alpha)});
    for (int c : ch[std::size_t(v)]) s.push_back({tree.position(c), std::pow(fm[c], alpha)});
    return s;
}

/// Compass search on one point: 8 directions, step doubled on success (up to
/// its initial value) and halved on failure until below min_step.
template <typename Scalar>
Vector2<Scalar> compass_search(Vector2<Scalar> p, const std::vector<Spoke<Scalar>>& spokes, Scalar step,
                               Scalar min_step, int max_evals = 4000) {
    static const Scalar r = Scalar(std::sqrt(0.5));
    static const Vector2<Scalar> dirs[8] = {{1, 0}, {r, r}, {0, 1}, {-r, r}, {-1, 0}, {-r, -r}, {0, -1}, {r, -r}};
    const Scalar max_step = step;
    Scalar best = star_cost(p, spokes);
    for (int it = 0; step >= min_step && it < max_evals; ++it) {
        int arg = -1;
        Scalar cand_best = best;
        for (int d = 0; d < 8; ++d) {
            const Scalar c = star_cost<Scalar>(p + step * dirs[d], spokes);
            if (c < cand_best) {
                cand_best = c;
                arg = d;
            }
        }
        if (arg >= 0 && cand_best < best - Scalar(1e-15) * tolerance_scale(best)) {
            p += step * dirs[arg];
            best = cand_best;
            step = std::min(step * Scalar(2), max_step);
        } else {
            step *= Scalar(0.5);
        }
    }
    return p;
}

} // namespace detail

/**
 * Moves the steiner nodes in `which` (all steiner nodes when empty) to local
 * minimizers of the cost by cyclic compass search. Topology is untouched.
 */
template <typename Scalar>
void relocate_steiner_points(IrrigationTree<Scalar>& tree, const DiscreteMeasure<Scalar>& mu, Scalar alpha,
                             Scalar initial_step, const std::vector<int>& which = {}, int max_sweeps = 50) {
    const auto fm = compute_fluxes(tree, mu);
    const auto ch = tree.children();
    std::vector<int> nodes = which;
    if (nodes.empty())
        for (int v = 1; v < tree.size(); ++v)
            if (tree.node(v).kind == NodeKind::steiner) nodes.push_back(v);
    const Scalar min_step = Scalar(1e-10);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        Scalar moved(0);
        for (int v : nodes) {
            if (v <= 0 || v >= tree.size() || tree.node(v).kind != NodeKind::steiner) continue;
            const auto spokes = detail::spokes_of(tree, ch, fm, alpha, v);
            const Vector2<Scalar> p = detail::compass_search(tree.position(v), spokes, initial_step, min_step);
            moved = std::max(moved, (p - tree.position(v)).norm());
            tree.set_position(v, p);
        }
        if (moved < min_step) break;
        initial_step = std::max(std::min(initial_step, Scalar(4) * moved), Scalar(64) * min_step);
    }
}

// ================================================================
// heuristic plan search
// ================================================================

struct PlanOptions {
    int max_moves = 200;
    double initial_step = 0;     // 0: derived from the measure extent
    int neighbor_limit = 12;     // candidate targets per node; <= 0 means all
    int restarts = 0;            // randomized perturb-and-descend rounds
    std::uint64_t seed = 0;
    int threads = 1;
};

namespace detail {

enum class MoveKind { reparent, split_edge, contract };

struct Move {
    MoveKind kind;
    int v;      // moved node (or contracted steiner)
    int target; // new parent, or child id of the split edge
};

template <typename Scalar>
Scalar default_step(const DiscreteMeasure<Scalar>& mu) {
    Scalar rmax(0);
    for (const auto& a : mu.atoms()) rmax = std::max(rmax, a.position.norm());
    return Scalar(0.025) * tolerance_scale(rmax);
}

template <typename Scalar>
Scalar segment_distance(const Vector2<Scalar>& p, const Vector2<Scalar>& a, const Vector2<Scalar>& b,
                        Vector2<Scalar>* foot = nullptr) {
    const Vector2<Scalar> d = b - a;
    const Scalar len2 = d.squaredNorm();
    Scalar t = len2 > Scalar(0) ? (p - a).dot(d) / len2 : Scalar(0);
    t = std::clamp(t, Scalar(0.05), Scalar(0.95));
    const Vector2<Scalar> f = a + t * d;
    if (foot) *foot = f;
    return (p - f).norm();
}

/// Applies a move; returns the nodes whose placement should be re-optimized.
template <typename Scalar>
std::vector<int> apply_move(IrrigationTree<Scalar>& t, const Move& m) {
    std::vector<int> touched;
    const int old_parent = m.v > 0 ? t.parent(m.v) : -1;
    switch (m.kind) {
    case MoveKind::reparent:
        t.set_parent(m.v, m.target);
        touched = {old_parent, m.target};
        break;
    case MoveKind::split_edge: {
        Vector2<Scalar> foot;
        segment_distance(t.position(m.v), t.position(t.parent(m.target)), t.position(m.target), &foot);
        const int s = t.add_steiner(foot, t.parent(m.target));
        t.set_parent(m.target, s);
        t.set_parent(m.v, s);
        touched = {s, old_parent};
        break;
    }
    case MoveKind::contract: {
        for (int c = 1; c < t.size(); ++c)
            if (t.parent(c) == m.v) t.set_parent(c, old_parent);
        // left childless; normalize_tree removes it
        touched = {old_parent};
        break;
    }
    }
    return touched;
}

template <typename Scalar>
std::vector<Move> candidate_moves(const IrrigationTree<Scalar>& t, int neighbor_limit) {
    std::vector<Move> moves;
    const int n = t.size();
    for (int v = 1; v < n; ++v) {
        std::vector<std::pair<Scalar, Move>> local;
        for (int u = 0; u < n; ++u) {
            if (u == v || u == t.parent(v) || t.in_subtree(u, v)) continue;
            local.push_back({(t.position(u) - t.position(v)).norm(), {MoveKind::reparent, v, u}});
        }
        for (int w = 1; w < n; ++w) {
            if (w == v || t.in_subtree(w, v)) continue;
            const Scalar d = segment_distance(t.position(v), t.position(t.parent(w)), t.position(w));
            local.push_back({d, {MoveKind::split_edge, v, w}});
        }
        std::stable_sort(local.begin(), local.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        if (neighbor_limit > 0 && local.size() > std::size_t(2 * neighbor_limit))
            local.resize(std::size_t(2 * neighbor_limit));
        for (const auto& l : local) moves.push_back(l.second);
        if (t.node(v).kind == NodeKind::steiner) moves.push_back({MoveKind::contract, v, -1});
    }
    return moves;
}

template <typename Scalar>
struct Evaluated {
    IrrigationTree<Scalar> tree;
    Scalar cost = std::numeric_limits<Scalar>::infinity();
};

template <typename Scalar>
Evaluated<Scalar> evaluate_move(const IrrigationTree<Scalar>& base, const DiscreteMeasure<Scalar>& mu, Scalar alpha,
                                const Move& m, Scalar step) {
    Evaluated<Scalar> e{base};
    const auto touched = apply_move(e.tree, m);
    std::vector<int> steiners;
    for (int v : touched)
        if (v > 0 && e.tree.node(v).kind == NodeKind::steiner) steiners.push_back(v);
    if (!steiners.empty()) relocate_steiner_points(e.tree, mu, alpha, step, steiners, 4);
    normalize_tree(e.tree, Scalar(1e-12));
    e.cost = irrigation_cost(e.tree, mu, alpha);
    return e;
}

/// Steepest-descent local search over topology moves; accepts strict decreases only.
template <typename Scalar>
IrrigationTree<Scalar> local_search(IrrigationTree<Scalar> tree, const DiscreteMeasure<Scalar>& mu, Scalar alpha,
                                    const PlanOptions& opt, Scalar step, int& moves_left) {
    relocate_steiner_points(tree, mu, alpha, step);
    normalize_tree(tree, Scalar(1e-12));
    Scalar cost = irrigation_cost(tree, mu, alpha);
    while (moves_left > 0) {
        const auto moves = candidate_moves(tree, opt.neighbor_limit);
        std::vector<Evaluated<Scalar>> results(moves.size());
        parallel_for(moves.size(), opt.threads,
                     [&](std::size_t k) { results[k] = evaluate_move(tree, mu, alpha, moves[k], step); });
        std::size_t best = moves.size();
        Scalar best_cost = cost - Scalar(1e-12) * tolerance_scale(cost);
        for (std::size_t k = 0; k < results.size(); ++k)
            if (results[k].cost < best_cost) {
                best_cost = results[k].cost;
                best = k;
            }
        if (best == moves.size()) break;
        tree = std::move(results[best].tree);
        relocate_steiner_points(tree, mu, alpha, step);
        normalize_tree(tree, Scalar(1e-12));
        cost = irrigation_cost(tree, mu, alpha);
        --moves_left;
    }
    return tree;
}

/// Random re-parenting kick used between restarts.
template <typename Scalar>
IrrigationTree<Scalar> perturb(IrrigationTree<Scalar> tree, std::mt19937_64& rng) {
    const int n = tree.size();
    if (n < 3) return tree;
    std::uniform_int_distribution<int> pick(1, n - 1);
    for (int k = 0; k < 2; ++k) {
        const int v = pick(rng);
        std::vector<int> targets;
        for (int u = 0; u < n; ++u)
            if (u != tree.parent(v) && !tree.in_subtree(u, v)) targets.push_back(u);
        if (targets.empty()) continue;
        std::uniform_int_distribution<std::size_t> t(0, targets.size() - 1);
        tree.set_parent(v, targets[t(rng)]);
    }
    normalize_tree(tree, Scalar(1e-12));
    return tree;
}

} // namespace detail

/**
 * Improves an admissible tree for `mu` by topology moves (re-parenting a
 * node, attaching it through a new steiner point on an existing edge,
 * contracting a steiner node) combined with compass-search relocation of the
 * steiner points. Only strict cost decreases are accepted.
 */
template <typename Scalar>
IrrigationTree<Scalar> improve_plan(IrrigationTree<Scalar> tree, const DiscreteMeasure<Scalar>& mu, Scalar alpha,
                                    const PlanOptions& opt = {}) {
    require_alpha(alpha);
    const Scalar step = opt.initial_step > 0 ? Scalar(opt.initial_step) : detail::default_step(mu);
    int moves_left = opt.max_moves;
    tree = detail::local_search(std::move(tree), mu, alpha, opt, step, moves_left);
    Scalar cost = irrigation_cost(tree, mu, alpha);

    std::mt19937_64 rng(opt.seed);
    for (int r = 0; r < opt.restarts; ++r) {
        int budget = opt.max_moves;
        auto cand = detail::local_search(detail::perturb(tree, rng), mu, alpha, opt, step, budget);
        const Scalar c = irrigation_cost(cand, mu, alpha);
        if (c < cost - Scalar(1e-12) * tolerance_scale(cost)) {
            tree = std::move(cand);
            cost = c;
        }
    }
    return tree;
}

/// Measure with its zero-mass atoms removed is what actually gets planned; the
/// returned tree refers to the original atom indices.
template <typename Scalar>
IrrigationTree<Scalar> optimize_plan(const DiscreteMeasure<Scalar>& mu, Scalar alpha, const PlanOptions& opt = {}) {
    if (!(mu.total_mass() > Scalar(0))) throw ValidationError("optimize_plan: measure has no mass");
    return improve_plan(IrrigationTree<Scalar>::star(mu), mu, alpha, opt);
}

// ================================================================
// exhaustive oracle
// ================================================================

namespace detail {

/// Rooted tree shape over a set of terminals; terminal < 0 marks a steiner node.
struct Shape;
using Forest = std::vector<std::shared_ptr<const Shape>>;
struct Shape {
    int terminal;
    Forest children;
};

class ShapeEnumerator {
public:
    const std::vector<Forest>& forests(unsigned mask) {
        if (auto it = forest_memo_.find(mask); it != forest_memo_.end()) return it->second;
        std::vector<Forest> out;
        if (mask == 0) {
            out.push_back({});
        } else {
            const unsigned low = mask & (~mask + 1u);
            const unsigned rest = mask ^ low;
            // block containing the lowest element: low | sub for every sub of rest
            for (unsigned sub = rest;; sub = (sub - 1) & rest) {
                const unsigned block = low | sub;
                const auto& ts = trees(block);
                const auto& fs = forests(mask ^ block);
                for (const auto& t : ts)
                    for (const auto& f : fs) {
                        Forest g{t};
                        g.insert(g.end(), f.begin(), f.end());
                        out.push_back(std::move(g));
                    }
                if (sub == 0) break;
            }
        }
        return forest_memo_.emplace(mask, std::move(out)).first->second;
    }

    const std::vector<std::shared_ptr<const Shape>>& trees(unsigned mask) {
        if (auto it = tree_memo_.find(mask); it != tree_memo_.end()) return it->second;
        std::vector<std::shared_ptr<const Shape>> out;
        for (int t = 0; t < 32; ++t) {
            if (!(mask & (1u << t))) continue;
            for (const auto& f : forests(mask ^ (1u << t))) out.push_back(std::make_shared<const Shape>(Shape{t, f}));
        }
        // steiner root: at least two subtrees, so the block holding the lowest element is proper
        const unsigned low = mask & (~mask + 1u);
        const unsigned rest = mask ^ low;
        for (unsigned sub = (rest - 1u) & rest; rest != 0; sub = (sub - 1u) & rest) {
            const unsigned block = low | sub;
            const auto& ts = trees(block);
            const auto& fs = forests(mask ^ block);
            for (const auto& t : ts)
                for (const auto& f : fs) {
                    Forest g{t};
                    g.insert(g.end(), f.begin(), f.end());
                    out.push_back(std::make_shared<const Shape>(Shape{-1, std::move(g)}));
                }
            if (sub == 0) break;
        }
        return tree_memo_.emplace(mask, std::move(out)).first->second;
    }

private:
    std::unordered_map<unsigned, std::vector<Forest>> forest_memo_;
    std::unordered_map<unsigned, std::vector<std::shared_ptr<const Shape>>> tree_memo_;
};

template <typename Scalar>
void emit_shape(const Shape& s, int parent, const std::vector<int>& atom_of, const DiscreteMeasure<Scalar>& mu,
                IrrigationTree<Scalar>& t) {
    const int v = s.terminal >= 0
                      ? t.add_terminal(mu[std::size_t(atom_of[std::size_t(s.terminal)])].position,
                                       atom_of[std::size_t(s.terminal)], parent)
                      : t.add_steiner(Vector2<Scalar>::Zero(), parent);
    for (const auto& c : s.children) emit_shape(*c, v, atom_of, mu, t);
}

/**
 * Places the steiner nodes of a fixed topology at the global minimizer of
 * sum_e w_e |d_e| (convex, weights fixed by the topology). Iteratively
 * reweighted least squares on the smoothed cost sum_e w_e sqrt(|d_e|^2 +
 * eps^2), with eps driven down to 1e-12 of the problem scale; each reweighted
 * subproblem is a small SPD solve.
 */
template <typename Scalar>
void optimal_steiner_positions(IrrigationTree<Scalar>& t, const DiscreteMeasure<Scalar>& mu, Scalar alpha,
                               Scalar scale, Scalar tol) {
    std::vector<int> var(std::size_t(t.size()), -1);
    std::vector<int> steiners;
    for (int v = 1; v < t.size(); ++v)
        if (t.node(v).kind == NodeKind::steiner) {
            var[std::size_t(v)] = int(steiners.size());
            steiners.push_back(v);
        }
    if (steiners.empty()) return;
    const auto fm = compute_fluxes(t, mu);
    const auto ch = t.children();

    // start each steiner at the mean of the terminals below it
    for (auto it = steiners.rbegin(); it != steiners.rend(); ++it) {
        Vector2<Scalar> sum = Vector2<Scalar>::Zero();
        for (int c : ch[std::size_t(*it)]) sum += t.position(c);
        t.set_position(*it, sum / Scalar(ch[std::size_t(*it)].size()));
    }

    const auto k = Eigen::Index(steiners.size());
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Rhs = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;
    std::vector<Scalar> weight(std::size_t(t.size()), Scalar(0));
    for (int v = 1; v < t.size(); ++v) weight[std::size_t(v)] = std::pow(fm[v], alpha);

    for (Scalar eps = Scalar(1e-2) * scale; eps >= Scalar(0.99e-12) * scale; eps *= Scalar(0.01)) {
        for (int iter = 0; iter < 500; ++iter) {
            Mat a = Mat::Zero(k, k);
            Rhs b = Rhs::Zero(k, 2);
            for (int v = 1; v < t.size(); ++v) {
                const int p = t.parent(v);
                const int iv = var[std::size_t(v)], ip = var[std::size_t(p)];
                if (iv < 0 && ip < 0) continue;
                const Scalar d2 = (t.position(v) - t.position(p)).squaredNorm();
                const Scalar om = weight[std::size_t(v)] / std::sqrt(d2 + eps * eps);
                if (iv >= 0) a(iv, iv) += om;
                if (ip >= 0) a(ip, ip) += om;
                if (iv >= 0 && ip >= 0) {
                    a(iv, ip) -= om;
                    a(ip, iv) -= om;
                } else if (iv >= 0) {
                    b.row(iv) += om * t.position(p).transpose();
                } else {
                    b.row(ip) += om * t.position(v).transpose();
                }
            }
            const Rhs x = a.ldlt().solve(b);
            Scalar moved(0);
            for (Eigen::Index i = 0; i < k; ++i) {
                const Vector2<Scalar> p = x.row(i).transpose();
                moved = std::max(moved, (p - t.position(steiners[std::size_t(i)])).norm());
                t.set_position(steiners[std::size_t(i)], p);
            }
            if (moved <= tol * scale) break;
        }
    }
}

} // namespace detail

/**
 * Exhaustive oracle for at most five atoms: enumerates every rooted tree
 * topology in which terminals may carry subtrees and steiner nodes have at
 * least two children, places the steiner nodes optimally for each, and
 * returns the cheapest plan.
 */
template <typename Scalar>
IrrigationTree<Scalar> brute_force_plan(const DiscreteMeasure<Scalar>& mu, Scalar alpha, int threads = 1) {
    require_alpha(alpha);
    std::vector<int> atom_of;
    Scalar scale(0);
    for (std::size_t a = 0; a < mu.size(); ++a)
        if (mu[a].mass > Scalar(0)) {
            atom_of.push_back(int(a));
            scale = std::max(scale, mu[a].position.norm());
        }
    if (atom_of.size() > 5) throw ValidationError("brute_force_plan: more than 5 atoms");
    if (atom_of.empty()) throw ValidationError("brute_force_plan: measure has no mass");
    scale = tolerance_scale(scale);

    detail::ShapeEnumerator en;
    const auto& forests = en.forests((1u << atom_of.size()) - 1u);
    std::vector<Scalar> costs(forests.size());
    std::vector<IrrigationTree<Scalar>> trees(forests.size());
    parallel_for(forests.size(), threads, [&](std::size_t f) {
        IrrigationTree<Scalar> t;
        for (const auto& s : forests[f]) detail::emit_shape(*s, 0, atom_of, mu, t);
        detail::optimal_steiner_positions(t, mu, alpha, scale, Scalar(1e-13));
        normalize_tree(t, Scalar(1e-9) * scale);
        costs[f] = irrigation_cost(t, mu, alpha);
        trees[f] = std::move(t);
    });
    std::size_t best = 0;
    for (std::size_t f = 1; f < forests.size(); ++f)
        if (costs[f] < costs[best] - Scalar(1e-12) * tolerance_scale(costs[best])) best = f;
    return trees[best];
}

} // namespace rootopt
