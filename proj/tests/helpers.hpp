#pragma once

#include "rootopt/optimality.hpp"

#include <filesystem>
#include <random>
#include <set>
#include <string>

namespace testing {

using namespace rootopt;

inline DiscreteMeasured random_measure(std::mt19937_64& rng, int n, const Domaind& d = Domaind::standard(),
                                       double mass_lo = 0.1, double mass_hi = 1.0) {
    std::uniform_real_distribution<double> ux(d.rect_min().x(), d.rect_max().x()), uy(d.rect_min().y(), d.rect_max().y()),
        um(mass_lo, mass_hi);
    std::vector<Atomd> atoms;
    for (int a = 0; a < n; ++a) atoms.push_back({{ux(rng), uy(rng)}, um(rng)});
    return DiscreteMeasured(std::move(atoms));
}

/// n atoms on distinct interior grid nodes.
inline DiscreteMeasured random_grid_measure(std::mt19937_64& rng, const Gridd& g, int n, double mass_lo = 0.01,
                                            double mass_hi = 0.2) {
    std::uniform_int_distribution<int> ui(1, g.nx() - 2), uj(1, g.ny() - 2);
    std::uniform_real_distribution<double> um(mass_lo, mass_hi);
    std::set<int> used;
    std::vector<Atomd> atoms;
    while (int(atoms.size()) < n) {
        const int k = g.index(ui(rng), uj(rng));
        if (used.insert(k).second) atoms.push_back({g.node(k), um(rng)});
    }
    return DiscreteMeasured(std::move(atoms));
}

/**
 * Random admissible tree: every atom is a terminal, attached either to an
 * earlier node or to a fresh steiner point placed on the segment towards it.
 */
inline IrrigationTreed random_tree(std::mt19937_64& rng, const DiscreteMeasured& mu) {
    IrrigationTreed t;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (std::size_t a = 0; a < mu.size(); ++a) {
        std::uniform_int_distribution<int> pick(0, t.size() - 1);
        const int p = pick(rng);
        if (p > 0 && u01(rng) < 0.3) {
            // split the edge into p with a steiner node, hang the atom there
            const Vector2d s = t.position(t.parent(p)) + (0.2 + 0.6 * u01(rng)) * (t.position(p) - t.position(t.parent(p)));
            const int sv = t.add_steiner(s, t.parent(p));
            t.set_parent(p, sv);
            t.add_terminal(mu[a].position, int(a), sv);
        } else {
            t.add_terminal(mu[a].position, int(a), p);
        }
    }
    return t;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("rootopt_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testing
