#include "helpers.hpp"

#include <algorithm>
#include <doctest.h>
#include <functional>

using namespace rootopt;

namespace {

/**
 * Counts plan topologies over n labelled terminals by brute force: every
 * parent array on root, terminals and k unlabelled steiner nodes, kept when
 * it is a tree with branching steiner nodes, deduplicated by canonical form.
 */
std::size_t count_topologies(int n) {
    std::set<std::string> seen;
    for (int k = 0; k < n; ++k) {
        const int size = 1 + n + k;
        std::vector<int> parent(static_cast<std::size_t>(size), 0);
        parent[0] = -1;
        std::function<void(int)> fill = [&](int v) {
            if (v == size) {
                std::vector<std::vector<int>> ch(static_cast<std::size_t>(size));
                for (int w = 1; w < size; ++w) ch[std::size_t(parent[std::size_t(w)])].push_back(w);
                for (int w = 1; w < size; ++w) {
                    int hops = 0;
                    for (int x = w; x != 0 && hops <= size; x = parent[std::size_t(x)]) ++hops;
                    if (hops > size) return;
                }
                for (int s = 1 + n; s < size; ++s)
                    if (ch[std::size_t(s)].size() < 2) return;
                std::function<std::string(int)> canon = [&](int w) {
                    std::vector<std::string> parts;
                    for (int c : ch[std::size_t(w)]) parts.push_back(canon(c));
                    std::sort(parts.begin(), parts.end());
                    std::string s = w == 0 ? "R" : w <= n ? "T" + std::to_string(w) : "S";
                    s += "(";
                    for (const auto& p : parts) s += p + ",";
                    return s + ")";
                };
                seen.insert(canon(0));
                return;
            }
            for (int p = 0; p < size; ++p) {
                if (p == v) continue;
                parent[std::size_t(v)] = p;
                fill(v + 1);
            }
        };
        fill(1);
    }
    return seen.size();
}

// cost of the two-atom Y with branch point s, minimised by zooming grid search (the cost is convex in s)
double two_atom_optimum(const DiscreteMeasured& mu, double alpha) {
    const auto cost = [&](const Vector2d& s) {
        return std::pow(mu[0].mass + mu[1].mass, alpha) * s.norm() +
               std::pow(mu[0].mass, alpha) * (mu[0].position - s).norm() +
               std::pow(mu[1].mass, alpha) * (mu[1].position - s).norm();
    };
    Vector2d centre = (mu[0].position + mu[1].position) / 3.0;
    double half = 2.0, best = cost(centre);
    for (int round = 0; round < 60; ++round) {
        Vector2d arg = centre;
        for (int i = -20; i <= 20; ++i)
            for (int j = -20; j <= 20; ++j) {
                const Vector2d s = centre + half / 20.0 * Vector2d(i, j);
                const double c = cost(s);
                if (c < best) {
                    best = c;
                    arg = s;
                }
            }
        centre = arg;
        half /= 4.0;
    }
    return best;
}

} // namespace

TEST_CASE("enumerated topologies match a brute-force count") {
    for (int n = 1; n <= 4; ++n) {
        detail::ShapeEnumerator en;
        CHECK(en.forests((1u << n) - 1u).size() == count_topologies(n));
    }
}

TEST_CASE("oracle on two atoms matches a direct search over branch points") {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 15; ++rep) {
        const auto mu = testing::random_measure(rng, 2);
        const double alpha = 0.2 + 0.05 * rep;
        const double expected = two_atom_optimum(mu, alpha);
        const auto t = brute_force_plan(mu, alpha);
        CHECK_NOTHROW(validate_tree(t, mu));
        CHECK(irrigation_cost(t, mu, alpha) == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("linear cost gives straight edges") {
    std::mt19937_64 rng(22);
    for (int n = 1; n <= 6; ++n) {
        const auto mu = testing::random_measure(rng, n);
        double direct = 0;
        for (const auto& a : mu.atoms()) direct += a.mass * a.position.norm();
        CHECK(irrigation_cost(optimize_plan(mu, 1.0), mu, 1.0) == doctest::Approx(direct).epsilon(1e-10));
        if (n <= 5) CHECK(irrigation_cost(brute_force_plan(mu, 1.0), mu, 1.0) == doctest::Approx(direct).epsilon(1e-10));
    }
}

TEST_CASE("heuristic stays close to the oracle") {
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 12; ++rep) {
        const int n = 2 + rep % 3;
        const auto mu = testing::random_measure(rng, n);
        const double alpha = 0.3 + 0.05 * rep;
        const double oracle = irrigation_cost(brute_force_plan(mu, alpha), mu, alpha);
        const auto h = optimize_plan(mu, alpha);
        CHECK_NOTHROW(validate_tree(h, mu));
        const double heur = irrigation_cost(h, mu, alpha);
        CHECK(heur <= 1.02 * oracle);
        CHECK(heur >= oracle * (1 - 1e-9));
    }
}

TEST_CASE("improve_plan never increases cost and is thread-independent") {
    std::mt19937_64 rng(24);
    const auto mu = testing::random_measure(rng, 12);
    const auto start = testing::random_tree(rng, mu);
    PlanOptions one, four;
    four.threads = 4;
    const auto a = improve_plan(start, mu, 0.6, one);
    const auto b = improve_plan(start, mu, 0.6, four);
    CHECK(irrigation_cost(a, mu, 0.6) <= irrigation_cost(start, mu, 0.6));
    CHECK(a.parents() == b.parents());
    for (int v = 0; v < a.size(); ++v) CHECK(a.position(v) == b.position(v));

    PlanOptions restarts;
    restarts.restarts = 3;
    CHECK(irrigation_cost(improve_plan(start, mu, 0.6, restarts), mu, 0.6) <= irrigation_cost(a, mu, 0.6) + 1e-15);
}

TEST_CASE("normalisation splices degenerate steiner nodes") {
    const DiscreteMeasured mu({{{1.0, 0.0}, 0.5}, {{1.0, 0.5}, 0.25}});
    IrrigationTreed t;
    const int s1 = t.add_steiner({0.5, 0.1}, 0);
    const int s2 = t.add_steiner({0.7, 0.1}, s1); // single child
    t.add_terminal(mu[0].position, 0, s2);
    t.add_terminal(mu[1].position, 1, s1);
    t.add_steiner({0.2, 0.2}, 0); // childless
    normalize_tree(t, 1e-12);
    CHECK(t.size() == 4);
    CHECK_NOTHROW(validate_tree(t, mu));
}

TEST_CASE("compass search finds the Fermat point") {
    std::vector<detail::Spoke<double>> spokes;
    for (double deg : {90.0, 210.0, 330.0}) {
        const double r = deg * M_PI / 180.0;
        spokes.push_back({{std::cos(r), std::sin(r)}, 1.0});
    }
    const Vector2d p = detail::compass_search<double>({0.3, 0.2}, spokes, 0.5, 1e-12);
    CHECK(detail::star_cost(p, spokes) == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("oracle input checks") {
    std::mt19937_64 rng(25);
    CHECK_THROWS_AS(brute_force_plan(testing::random_measure(rng, 6), 0.5), ValidationError);
    CHECK_THROWS_AS(optimize_plan(DiscreteMeasured({{{1.0, 0.0}, 0.0}}), 0.5), ValidationError);
}
