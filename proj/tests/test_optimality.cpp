#include "helpers.hpp"

#include <doctest.h>

using namespace rootopt;

namespace {

RunConfigd small_config(double c = 0.2) {
    RunConfigd cfg;
    cfg.c = c;
    cfg.grid = Gridd::with_nx(Domaind::standard(), 17);
    cfg.spawn = false;
    return cfg;
}

// payoff of a single atom of mass m at x: m u_m(x) - c |x| m^alpha
double single_atom_payoff(const RunConfigd& cfg, const Vector2d& x, double m) {
    const DiscreteMeasured mu({{x, m}});
    const auto u = solve_state(cfg.grid, mu, cfg.growth, state_options_for(cfg));
    return m * u.at_node(x) - cfg.c * x.norm() * std::pow(m, cfg.alpha);
}

double golden_section_argmax(const RunConfigd& cfg, const Vector2d& x, double lo, double hi) {
    const double r = (std::sqrt(5.0) - 1) / 2;
    double a = lo, b = hi;
    double x1 = b - r * (b - a), x2 = a + r * (b - a);
    double f1 = single_atom_payoff(cfg, x, x1), f2 = single_atom_payoff(cfg, x, x2);
    while (b - a > 1e-7 * b) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = single_atom_payoff(cfg, x, x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = single_atom_payoff(cfg, x, x1);
        }
    }
    return 0.5 * (a + b);
}

} // namespace

TEST_CASE("payoff of a single straight root") {
    const auto cfg = small_config();
    const Vector2d x(1.0, 0.25);
    const DiscreteMeasured mu({{x, 0.3}});
    IrrigationTreed t;
    t.add_terminal(x, 0, 0);
    const auto u = solve_state(cfg.grid, mu, cfg.growth);
    CHECK(payoff(u, mu, t, cfg.c, cfg.alpha) ==
          doctest::Approx(0.3 * u.at_node(x) - cfg.c * x.norm() * std::pow(0.3, cfg.alpha)).epsilon(1e-14));
    // linear in c with slope minus the cost
    const double p1 = payoff(u, mu, t, 0.1, cfg.alpha), p2 = payoff(u, mu, t, 0.4, cfg.alpha);
    CHECK((p1 - p2) / 0.3 == doctest::Approx(irrigation_cost(t, mu, cfg.alpha)).epsilon(1e-12));
    CHECK(payoff(u, DiscreteMeasured{}, IrrigationTreed{}, cfg.c, cfg.alpha) == 0.0);
}

TEST_CASE("optimality residual is Phi - c alpha Z per atom") {
    const auto cfg = small_config();
    std::mt19937_64 rng(41);
    const auto mu = testing::random_grid_measure(rng, cfg.grid, 4, 0.05, 0.3);
    const auto t = optimize_plan(mu, cfg.alpha);
    const auto u = solve_state(cfg.grid, mu, cfg.growth);
    const auto psi = solve_adjoint(cfg.grid, mu, u, cfg.growth);
    const auto lv = landscape(t, mu, cfg.alpha);
    const auto rep = optimality_residual(u, psi, t, lv, mu, cfg.c, cfg.alpha);
    REQUIRE(rep.atoms.size() == 4);
    double sup = 0;
    for (const auto& r : rep.atoms) {
        const double phi = (1 - psi.at_node(r.position)) * u.at_node(r.position);
        const double z = lv[t.terminal_of(r.atom)];
        CHECK(r.residual == doctest::Approx(phi - cfg.c * cfg.alpha * z).epsilon(1e-13));
        sup = std::max(sup, std::abs(phi - cfg.c * cfg.alpha * z));
    }
    CHECK(rep.sup_residual == doctest::Approx(sup));
}

TEST_CASE("single-atom ascent matches a golden-section search") {
    for (double c : {0.15, 0.3}) {
        const auto cfg = small_config(c);
        const Vector2d x(1.0, 0.25);
        const auto res = ascend_measure(cfg, DiscreteMeasured({{x, 0.05}}));
        CHECK(res.status == "converged");
        REQUIRE(res.final_state.mu.size() == 1);
        const double expected = golden_section_argmax(cfg, x, 1e-4, 4.0);
        CHECK(res.final_state.mu[0].mass == doctest::Approx(expected).epsilon(1e-3));

        // accepted payoffs never decrease
        double last = -1e300;
        for (const auto& r : res.trace.records) {
            if (!r.accepted) continue;
            CHECK(r.payoff >= last);
            last = r.payoff;
        }

        // restarting from the optimum takes no further step
        const auto again = ascend_measure(cfg, res.final_state.mu);
        CHECK(again.trace.accepted_steps() == 0);
        CHECK(again.status == "converged");
    }
}

TEST_CASE("ascent on several atoms improves the payoff and keeps the trace monotone") {
    auto cfg = small_config();
    cfg.spawn = true;
    cfg.max_outer_iters = 40;
    std::mt19937_64 rng(42);
    const auto mu0 = testing::random_grid_measure(rng, cfg.grid, 3, 0.02, 0.1);
    const auto res = ascend_measure(cfg, mu0);
    double last = -1e300;
    for (const auto& r : res.trace.records)
        if (r.accepted) {
            CHECK(r.payoff >= last);
            last = r.payoff;
        }
    CHECK(res.final_state.payoff >= res.trace.records.front().payoff);
    CHECK_NOTHROW(validate_tree(res.final_state.tree, res.final_state.mu));
}

TEST_CASE("path inequality holds at the optimum and detects an overpriced landscape") {
    auto cfg = small_config();
    cfg.spawn = true;
    const auto res = ascend_measure(cfg, DiscreteMeasured({{{0.75, 0.0}, 0.05}}));
    CHECK(res.status == "converged");
    const auto& fin = res.final_state;
    const double tol = 1e-3 * cfg.growth.u_max;
    const auto ok = path_inequality_check(fin.u, res.psi, fin.tree, fin.mu, cfg.c, cfg.alpha, tol);
    CHECK(ok.samples > 0);
    CHECK(ok.fraction_ok() >= 0.99);
    // with a tenth of the cost the roots would pay to grow anywhere along the path
    const auto bad = path_inequality_check(fin.u, res.psi, fin.tree, fin.mu, cfg.c / 10, cfg.alpha, tol);
    CHECK(bad.fraction_ok() < 0.5);
}

TEST_CASE("support density report") {
    const auto g = Gridd::with_nx(Domaind::standard(), 17);
    const DiscreteMeasured mu({{{1.0, 0.0}, 0.3}, {{1.0625, 0.0}, 0.2}, {{0.5, -0.5}, 0.0}});
    const auto rows = support_density_report(mu, g, {1.0, 0.5, 0.0625});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].cells == 1);
    CHECK(rows[0].fraction == 1.0);
    CHECK(rows[1].cells == 4);
    CHECK(rows[1].occupied == 1);
    CHECK(rows[2].cells == 256);
    CHECK(rows[2].occupied == 2);
    CHECK_THROWS_AS(support_density_report(mu, g, {0.0}), ValidationError);
}

TEST_CASE("plans carry over when atoms come and go") {
    const DiscreteMeasured mu({{{1.0, 0.0}, 0.3}, {{1.0, 0.25}, 0.2}, {{0.75, 0.25}, 0.1}});
    const auto t = optimize_plan(mu, 0.75);
    const DiscreteMeasured fewer({{{1.0, 0.25}, 0.2}, {{0.75, 0.25}, 0.1}});
    const auto mapped = detail::remap_tree(t, mu, fewer);
    REQUIRE(mapped.has_value());
    CHECK_NOTHROW(validate_tree(*mapped, fewer));
    const DiscreteMeasured more({{{1.0, 0.0}, 0.3}, {{1.0, 0.25}, 0.2}, {{0.75, 0.25}, 0.1}, {{1.25, 0.0}, 0.05}});
    const auto grown = detail::remap_tree(t, mu, more);
    REQUIRE(grown.has_value());
    CHECK_NOTHROW(validate_tree(*grown, more));
}

TEST_CASE("ascent input checks") {
    const auto cfg = small_config();
    CHECK_THROWS_AS(ascend_measure(cfg, DiscreteMeasured{}), ValidationError);
    CHECK_THROWS_AS(ascend_measure(cfg, DiscreteMeasured({{{1.01, 0.0}, 0.1}})), ValidationError);
}
