#pragma once

#include "rootopt/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace rootopt {

enum class NodeKind { root, steiner, terminal };

template <typename Scalar>
struct TreeNode {
    Vector2<Scalar> position;
    NodeKind kind = NodeKind::steiner;
    int atom = -1; // atom index for terminals
};

/**
 * Rooted geometric tree carrying mass from the origin to the atoms of a
 * measure. Node 0 is the root; every other node stores its parent, so the
 * edge set is {(parent[v], v)} and each edge is identified by its child.
 * Being a tree is what encodes the single path property of the plan.
 */
template <typename Scalar>
class IrrigationTree {
public:
    IrrigationTree() { nodes_.push_back({Vector2<Scalar>::Zero(), NodeKind::root, -1}); parent_.push_back(-1); }

    /// Every atom with positive mass attached directly to the root.
    static IrrigationTree star(const DiscreteMeasure<Scalar>& mu) {
        IrrigationTree t;
        for (std::size_t a = 0; a < mu.size(); ++a)
            if (mu[a].mass > Scalar(0)) t.add_terminal(mu[a].position, int(a), 0);
        return t;
    }

    int add_node(const TreeNode<Scalar>& n, int parent) {
        nodes_.push_back(n);
        parent_.push_back(parent);
        return int(nodes_.size()) - 1;
    }
    int add_terminal(const Vector2<Scalar>& p, int atom, int parent) {
        return add_node({p, NodeKind::terminal, atom}, parent);
    }
    int add_steiner(const Vector2<Scalar>& p, int parent) { return add_node({p, NodeKind::steiner, -1}, parent); }

    int size() const { return int(nodes_.size()); }
    const TreeNode<Scalar>& node(int v) const { return nodes_[std::size_t(v)]; }
    TreeNode<Scalar>& node(int v) { return nodes_[std::size_t(v)]; }
    const std::vector<TreeNode<Scalar>>& nodes() const { return nodes_; }
    const Vector2<Scalar>& position(int v) const { return nodes_[std::size_t(v)].position; }
    void set_position(int v, const Vector2<Scalar>& p) { nodes_[std::size_t(v)].position = p; }
    int parent(int v) const { return parent_[std::size_t(v)]; }
    void set_parent(int v, int p) { parent_[std::size_t(v)] = p; }
    const std::vector<int>& parents() const { return parent_; }

    Scalar edge_length(int v) const { return (position(v) - position(parent(v))).norm(); }

    std::vector<std::vector<int>> children() const {
        std::vector<std::vector<int>> ch(nodes_.size());
        for (int v = 1; v < size(); ++v)
            if (parent(v) >= 0) ch[std::size_t(parent(v))].push_back(v);
        return ch;
    }

    /// Nodes in breadth-first order from the root; throws if some node is unreachable.
    std::vector<int> topological_order() const {
        const auto ch = children();
        std::vector<int> order{0};
        order.reserve(nodes_.size());
        for (std::size_t k = 0; k < order.size(); ++k)
            for (int c : ch[std::size_t(order[k])]) order.push_back(c);
        if (order.size() != nodes_.size()) throw ValidationError("tree: edges do not form a tree rooted at the origin");
        return order;
    }

    /// Node index of the terminal carrying atom a, or -1.
    int terminal_of(int atom) const {
        for (int v = 0; v < size(); ++v)
            if (nodes_[std::size_t(v)].kind == NodeKind::terminal && nodes_[std::size_t(v)].atom == atom) return v;
        return -1;
    }

    /// Is u in the subtree rooted at v (including v itself)?
    bool in_subtree(int u, int v) const {
        for (int w = u; w >= 0; w = parent(w))
            if (w == v) return true;
        return false;
    }

    /// Remove node v (must have no children) and renumber.
    void erase_leaf(int v) {
        nodes_.erase(nodes_.begin() + v);
        parent_.erase(parent_.begin() + v);
        for (auto& p : parent_)
            if (p > v) --p;
    }

private:
    std::vector<TreeNode<Scalar>> nodes_;
    std::vector<int> parent_;
};

/**
 * Checks the structural invariants: rooted at the origin, acyclic, each
 * positive-mass atom the terminal of exactly one node, steiner nodes with at
 * least two children, strictly positive edge lengths.
 */
template <typename Scalar>
void validate_tree(const IrrigationTree<Scalar>& tree, const DiscreteMeasure<Scalar>& mu) {
    if (tree.size() == 0 || tree.node(0).kind != NodeKind::root || tree.parent(0) != -1)
        throw ValidationError("tree: node 0 must be the root");
    if (tree.position(0).norm() != Scalar(0)) throw ValidationError("tree: root must sit at the origin");
    for (int v = 1; v < tree.size(); ++v) {
        if (tree.parent(v) < 0 || tree.parent(v) >= tree.size())
            throw ValidationError("tree: node " + std::to_string(v) + " has no valid parent");
        if (tree.node(v).kind == NodeKind::root) throw ValidationError("tree: more than one root");
    }
    tree.topological_order();

    const auto ch = tree.children();
    std::vector<int> seen(mu.size(), 0);
    for (int v = 1; v < tree.size(); ++v) {
        const auto& n = tree.node(v);
        if (n.kind == NodeKind::terminal) {
            if (n.atom < 0 || std::size_t(n.atom) >= mu.size())
                throw ValidationError("tree: terminal " + std::to_string(v) + " refers to unknown atom");
            if (++seen[std::size_t(n.atom)] > 1)
                throw ValidationError("tree: atom " + std::to_string(n.atom) + " is the terminal of two nodes");
            if ((n.position - mu[std::size_t(n.atom)].position).norm() > Scalar(1e-12) * tolerance_scale(n.position.norm()))
                throw ValidationError("tree: terminal " + std::to_string(v) + " is not at its atom");
        } else if (ch[std::size_t(v)].size() < 2) {
            throw ValidationError("tree: steiner node " + std::to_string(v) + " has fewer than two children");
        }
        if (!(tree.edge_length(v) > Scalar(0)))
            throw ValidationError("tree: edge into node " + std::to_string(v) + " has zero length");
    }
    for (std::size_t a = 0; a < mu.size(); ++a)
        if (mu[a].mass > Scalar(0) && seen[a] == 0)
            throw ValidationError("tree: atom " + std::to_string(a) + " is not a terminal of the tree");
}

// ================================================================
// flux, cost, landscape
// ================================================================

/**
 * Flux through each node: flux[v] is the mass carried by the edge from
 * parent(v) into v; flux[0] is the total mass leaving the root.
 */
template <typename Scalar>
struct FluxMap {
    std::vector<Scalar> flux;

    Scalar operator[](int v) const { return flux[std::size_t(v)]; }
};

template <typename Scalar>
FluxMap<Scalar> compute_fluxes(const IrrigationTree<Scalar>& tree, const DiscreteMeasure<Scalar>& mu) {
    std::vector<int> seen(mu.size(), 0);
    FluxMap<Scalar> fm{std::vector<Scalar>(std::size_t(tree.size()), Scalar(0))};
    for (int v = 0; v < tree.size(); ++v) {
        const auto& n = tree.node(v);
        if (n.kind != NodeKind::terminal) continue;
        if (n.atom < 0 || std::size_t(n.atom) >= mu.size())
            throw ValidationError("fluxes: terminal " + std::to_string(v) + " has no matching atom");
        ++seen[std::size_t(n.atom)];
        fm.flux[std::size_t(v)] = mu[std::size_t(n.atom)].mass;
    }
    for (std::size_t a = 0; a < mu.size(); ++a) {
        if (seen[a] > 1) throw ValidationError("fluxes: atom " + std::to_string(a) + " has several terminals");
        if (seen[a] == 0 && mu[a].mass > Scalar(0))
            throw ValidationError("fluxes: atom " + std::to_string(a) + " has no terminal");
    }
    const auto order = tree.topological_order();
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if (*it != 0) fm.flux[std::size_t(tree.parent(*it))] += fm.flux[std::size_t(*it)];
    return fm;
}

template <typename Scalar>
void require_alpha(Scalar alpha) {
    if (!(alpha > Scalar(0) && alpha <= Scalar(1))) throw ValidationError("alpha must lie in (0,1]");
}

/// Sum over edges of flux^alpha * length.
template <typename Scalar>
Scalar irrigation_cost(const IrrigationTree<Scalar>& tree, const DiscreteMeasure<Scalar>& mu, Scalar alpha) {
    require_alpha(alpha);
    const auto fm = compute_fluxes(tree, mu);
    Scalar cost(0);
    for (int v = 1; v < tree.size(); ++v)
        if (fm[v] > Scalar(0)) cost += std::pow(fm[v], alpha) * tree.edge_length(v);
    return cost;
}

/// Landscape function at the tree nodes: Z(root) = 0, Z(q) = Z(p) + m_e^(alpha-1) |q - p|.
template <typename Scalar>
struct LandscapeValues {
    std::vector<Scalar> z;

    Scalar operator[](int v) const { return z[std::size_t(v)]; }
};

template <typename Scalar>
LandscapeValues<Scalar> landscape(const IrrigationTree<Scalar>& tree, const FluxMap<Scalar>& fm, Scalar alpha) {
    require_alpha(alpha);
    LandscapeValues<Scalar> lv{std::vector<Scalar>(std::size_t(tree.size()), Scalar(0))};
    for (int v : tree.topological_order()) {
        if (v == 0) continue;
        if (!(fm[v] > Scalar(0))) throw ValidationError("landscape: zero flux on edge into node " + std::to_string(v));
        lv.z[std::size_t(v)] = lv[tree.parent(v)] + std::pow(fm[v], alpha - Scalar(1)) * tree.edge_length(v);
    }
    return lv;
}

template <typename Scalar>
LandscapeValues<Scalar> landscape(const IrrigationTree<Scalar>& tree, const DiscreteMeasure<Scalar>& mu, Scalar alpha) {
    return landscape(tree, compute_fluxes(tree, mu), alpha);
}

/// Landscape value at each atom (its terminal); atoms absent from the tree get +inf.
template <typename Scalar>
VectorX<Scalar> landscape_at_atoms(const IrrigationTree<Scalar>& tree, const LandscapeValues<Scalar>& lv,
                                   std::size_t atom_count) {
    VectorX<Scalar> z = VectorX<Scalar>::Constant(Eigen::Index(atom_count), std::numeric_limits<Scalar>::infinity());
    for (int v = 0; v < tree.size(); ++v)
        if (tree.node(v).kind == NodeKind::terminal) z[tree.node(v).atom] = lv[v];
    return z;
}

/**
 * Radial lower bound: integral over r of mu(|x| >= r)^alpha, evaluated
 * exactly as a finite sum over the sorted distinct atom radii.
 */
template <typename Scalar>
Scalar cost_lower_bound(const DiscreteMeasure<Scalar>& mu, Scalar alpha) {
    std::vector<std::pair<Scalar, Scalar>> rm;
    for (const auto& a : mu.atoms())
        if (a.mass > Scalar(0)) rm.emplace_back(a.position.norm(), a.mass);
    std::sort(rm.begin(), rm.end());
    Scalar remaining(0);
    for (const auto& p : rm) remaining += p.second;
    Scalar bound(0), r_prev(0);
    for (std::size_t k = 0; k < rm.size();) {
        const Scalar r = rm[k].first;
        bound += (r - r_prev) * std::pow(std::max(remaining, Scalar(0)), alpha);
        while (k < rm.size() && rm[k].first == r) remaining -= rm[k++].second;
        r_prev = r;
    }
    return bound;
}

/// First-order cost of routing extra mass to `node` along its existing path: alpha Z(node).
template <typename Scalar>
Scalar marginal_cost_at_node(const IrrigationTree<Scalar>& tree, const DiscreteMeasure<Scalar>& mu, Scalar alpha,
                             int node) {
    if (node < 0 || node >= tree.size()) throw ValidationError("marginal_cost_at_node: node out of range");
    return alpha * landscape(tree, mu, alpha)[node];
}

// ================================================================
// optimality-based bounds on plans
// ================================================================

template <typename Scalar>
struct BoundViolation {
    int first = -1;  // node (or path sample) indices
    int second = -1;
    Scalar lhs{};
    Scalar rhs{};
};

template <typename Scalar>
struct BoundReport {
    std::size_t pairs_checked = 0;
    std::vector<BoundViolation<Scalar>> violations;

    bool ok() const { return violations.empty(); }
};

/**
 * Hölder-type bound of optimal plans: for every pair of tree nodes x, y,
 * Z(x) - Z(y) <= (1/alpha) flux(x)^(alpha-1) |x - y|.
 */
template <typename Scalar>
BoundReport<Scalar> check_holder_bound(const IrrigationTree<Scalar>& tree, const DiscreteMeasure<Scalar>& mu,
                                       Scalar alpha, Scalar rel_tol = Scalar(1e-9)) {
    const auto fm = compute_fluxes(tree, mu);
    const auto lv = landscape(tree, fm, alpha);
    BoundReport<Scalar> rep;
    Scalar zmax(0);
    for (Scalar z : lv.z) zmax = std::max(zmax, z);
    const Scalar slack = rel_tol * tolerance_scale(zmax);
    for (int x = 0; x < tree.size(); ++x) {
        const Scalar k = std::pow(fm[x], alpha - Scalar(1)) / alpha;
        for (int y = 0; y < tree.size(); ++y) {
            if (x == y) continue;
            ++rep.pairs_checked;
            const Scalar lhs = lv[x] - lv[y];
            const Scalar rhs = k * (tree.position(x) - tree.position(y)).norm();
            if (lhs > rhs + slack) rep.violations.push_back({x, y, lhs, rhs});
        }
    }
    return rep;
}

/**
 * Arc-chord bound of optimal plans: along any root-to-leaf path, between two
 * points where the flux stays >= delta0, arc length <= (1/alpha)
 * (delta0/M)^(alpha-1) chord length. Edges are subdivided into
 * `samples_per_edge` pieces so interior points are checked too. A violation
 * records the edges (by child node) containing the two points.
 */
template <typename Scalar>
BoundReport<Scalar> check_arc_chord(const IrrigationTree<Scalar>& tree, const DiscreteMeasure<Scalar>& mu,
                                    Scalar alpha, Scalar delta0, int samples_per_edge = 8,
                                    Scalar rel_tol = Scalar(1e-9)) {
    const auto fm = compute_fluxes(tree, mu);
    const Scalar total = fm[0];
    BoundReport<Scalar> rep;
    if (!(total > Scalar(0)) || !(delta0 > Scalar(0))) return rep;
    const Scalar bound = std::pow(delta0 / total, alpha - Scalar(1)) / alpha;
    const auto ch = tree.children();

    struct Sample {
        Vector2<Scalar> p;
        Scalar arc;
        int edge;
    };
    for (int leaf = 1; leaf < tree.size(); ++leaf) {
        if (!ch[std::size_t(leaf)].empty()) continue;
        std::vector<int> path;
        for (int v = leaf; v > 0; v = tree.parent(v)) path.push_back(v);
        std::reverse(path.begin(), path.end());

        std::vector<Sample> samples{{tree.position(0), Scalar(0), path.front()}};
        Scalar arc(0);
        for (int v : path) {
            if (fm[v] < delta0) break;
            const Vector2<Scalar> a = tree.position(tree.parent(v));
            const Vector2<Scalar> b = tree.position(v);
            const Scalar len = (b - a).norm();
            for (int k = 1; k <= samples_per_edge; ++k) {
                const Scalar t = Scalar(k) / Scalar(samples_per_edge);
                samples.push_back({a + t * (b - a), arc + t * len, v});
            }
            arc += len;
        }
        for (std::size_t i = 0; i < samples.size(); ++i)
            for (std::size_t j = i + 1; j < samples.size(); ++j) {
                ++rep.pairs_checked;
                const Scalar a = samples[j].arc - samples[i].arc;
                const Scalar chord = (samples[j].p - samples[i].p).norm();
                if (a > bound * chord + rel_tol * tolerance_scale(a))
                    rep.violations.push_back({samples[i].edge, samples[j].edge, a, bound * chord});
            }
    }
    return rep;
}

/// Flux never increases from a node to its children.
template <typename Scalar>
bool flux_monotone(const IrrigationTree<Scalar>& tree, const FluxMap<Scalar>& fm) {
    for (int v = 1; v < tree.size(); ++v)
        if (fm[v] > fm[tree.parent(v)]) return false;
    return true;
}

using IrrigationTreed = IrrigationTree<double>;
using FluxMapd = FluxMap<double>;
using LandscapeValuesd = LandscapeValues<double>;

} // namespace rootopt
