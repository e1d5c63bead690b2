#include "helpers.hpp"

#include <doctest.h>

using namespace rootopt;

namespace {

// flux into v: total mass of the atoms whose terminal lies below v
double subtree_mass(const IrrigationTreed& t, const DiscreteMeasured& mu, int v) {
    double m = 0;
    for (int w = 0; w < t.size(); ++w)
        if (t.node(w).kind == NodeKind::terminal && t.in_subtree(w, v)) m += mu[std::size_t(t.node(w).atom)].mass;
    return m;
}

// Z by walking from v to the root
double path_landscape(const IrrigationTreed& t, const DiscreteMeasured& mu, double alpha, int v) {
    double z = 0;
    for (int w = v; w > 0; w = t.parent(w)) z += std::pow(subtree_mass(t, mu, w), alpha - 1) * t.edge_length(w);
    return z;
}

// integral of mu(|x| >= r)^alpha dr by the midpoint rule
double integrated_lower_bound(const DiscreteMeasured& mu, double alpha, int steps) {
    double rmax = 0;
    for (const auto& a : mu.atoms()) rmax = std::max(rmax, a.position.norm());
    const double dr = rmax / steps;
    double s = 0;
    for (int k = 0; k < steps; ++k) s += std::pow(mu.mass_outside((k + 0.5) * dr), alpha) * dr;
    return s;
}

} // namespace

TEST_CASE("fluxes equal subtree masses") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        const auto mu = testing::random_measure(rng, 1 + rep % 9);
        const auto t = testing::random_tree(rng, mu);
        CHECK_NOTHROW(validate_tree(t, mu));
        const auto fm = compute_fluxes(t, mu);
        for (int v = 0; v < t.size(); ++v) CHECK(fm[v] == doctest::Approx(subtree_mass(t, mu, v)).epsilon(1e-13));
        CHECK(flux_monotone(t, fm));
    }
}

TEST_CASE("landscape matches path sums and the cost identity") {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 20; ++rep) {
        const double alpha = 0.3 + 0.035 * rep;
        const auto mu = testing::random_measure(rng, 2 + rep % 12);
        const auto t = testing::random_tree(rng, mu);
        const auto lv = landscape(t, mu, alpha);
        for (int v = 0; v < t.size(); ++v) CHECK(lv[v] == doctest::Approx(path_landscape(t, mu, alpha, v)).epsilon(1e-12));
        const auto z = landscape_at_atoms(t, lv, mu.size());
        double lhs = 0;
        for (std::size_t a = 0; a < mu.size(); ++a) lhs += mu[a].mass * z[Eigen::Index(a)];
        const double cost = irrigation_cost(t, mu, alpha);
        CHECK(std::abs(lhs - cost) <= 1e-10 * cost);
        for (int v = 1; v < t.size(); ++v)
            CHECK(marginal_cost_at_node(t, mu, alpha, v) == doctest::Approx(alpha * lv[v]));
    }
}

TEST_CASE("star tree costs") {
    const DiscreteMeasured mu({{{1.0, 0.0}, 0.5}, {{0.6, 0.8}, 0.25}});
    const auto star = IrrigationTreed::star(mu);
    CHECK(irrigation_cost(star, mu, 1.0) == doctest::Approx(0.5 + 0.25));
    CHECK(irrigation_cost(star, mu, 0.5) == doctest::Approx(std::sqrt(0.5) + std::sqrt(0.25)));
    CHECK_THROWS_AS(irrigation_cost(star, mu, 0.0), ValidationError);
    CHECK_THROWS_AS(irrigation_cost(star, mu, 1.2), ValidationError);
}

TEST_CASE("tree validation") {
    const DiscreteMeasured mu({{{1.0, 0.0}, 0.5}, {{1.0, 0.5}, 0.25}});
    IrrigationTreed missing;
    missing.add_terminal(mu[0].position, 0, 0);
    CHECK_THROWS_AS(validate_tree(missing, mu), ValidationError);

    IrrigationTreed lonely;
    const int s = lonely.add_steiner({0.5, 0.0}, 0);
    lonely.add_terminal(mu[0].position, 0, s);
    lonely.add_terminal(mu[1].position, 1, 0);
    CHECK_THROWS_AS(validate_tree(lonely, mu), ValidationError);

    IrrigationTreed cyc;
    const int a = cyc.add_terminal(mu[0].position, 0, 0);
    const int b = cyc.add_terminal(mu[1].position, 1, a);
    cyc.set_parent(a, b);
    CHECK_THROWS_AS(validate_tree(cyc, mu), ValidationError);

    IrrigationTreed moved;
    moved.add_terminal({1.0, 0.1}, 0, 0);
    moved.add_terminal(mu[1].position, 1, 0);
    CHECK_THROWS_AS(validate_tree(moved, mu), ValidationError);

    // zero-mass atoms may be left out
    const DiscreteMeasured partial({{{1.0, 0.0}, 0.5}, {{1.0, 0.5}, 0.0}});
    CHECK_NOTHROW(validate_tree(missing, partial));
}

TEST_CASE("radial lower bound") {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 10; ++rep) {
        const auto mu = testing::random_measure(rng, 1 + rep);
        const double alpha = 0.4 + 0.05 * rep;
        CHECK(cost_lower_bound(mu, alpha) == doctest::Approx(integrated_lower_bound(mu, alpha, 200000)).epsilon(1e-4));
        CHECK(cost_lower_bound(mu, alpha) <= irrigation_cost(IrrigationTreed::star(mu), mu, alpha));
    }
    const DiscreteMeasured one({{{0.6, 0.8}, 0.3}});
    CHECK(cost_lower_bound(one, 0.75) == doctest::Approx(std::pow(0.3, 0.75)).epsilon(1e-15));
}

TEST_CASE("bound checks catch detours") {
    const DiscreteMeasured mu({{{1.0, 0.0}, 1.0}});
    IrrigationTreed straight;
    straight.add_terminal(mu[0].position, 0, 0);
    CHECK(check_holder_bound(straight, mu, 0.75).ok());
    CHECK(check_arc_chord(straight, mu, 0.75, 1.0).ok());

    // a detour through (0.5, 1): arc length 2.24 against a chord of 1
    const DiscreteMeasured mu2({{{1.0, 0.0}, 1.0}, {{0.5, 1.0}, 1e-9}});
    IrrigationTreed detour;
    const int k = detour.add_terminal({0.5, 1.0}, 1, 0);
    detour.add_terminal({1.0, 0.0}, 0, k);
    const auto holder = check_holder_bound(detour, mu2, 0.75);
    CHECK_FALSE(holder.ok());
    CHECK(check_arc_chord(detour, mu2, 0.75, 1.0).violations.size() > 0);
}
