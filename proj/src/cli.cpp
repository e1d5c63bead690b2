#include "rootopt/cli.hpp"

#include "rootopt/config.hpp"
#include "rootopt/io.hpp"
#include "rootopt/svg.hpp"

#include <algorithm>
#include <ostream>

namespace rootopt {

namespace fs = std::filesystem;

namespace {

struct Context {
    KeyValues kv;
    RunConfigd cfg;
    fs::path out;
    int threads = 1;
};

Context make_context(const CommandSpec& spec) {
    Context ctx;
    if (!spec.config.empty()) ctx.kv = KeyValues::load(spec.config);
    for (const auto& o : spec.overrides) ctx.kv.set(o);
    if (spec.seed) ctx.kv.set("seed", std::to_string(*spec.seed));
    ctx.cfg = make_run_config(ctx.kv);
    if (spec.threads < 1) throw ValidationError("--threads must be at least 1");
    ctx.threads = spec.threads;
    ctx.out = spec.out_dir;
    std::error_code ec;
    fs::create_directories(ctx.out, ec);
    if (ec || !fs::is_directory(ctx.out)) throw ValidationError("cannot create output directory " + ctx.out.string());
    return ctx;
}

DiscreteMeasured load_measure(const Context& ctx) {
    if (!ctx.kv.has("measure")) throw ValidationError("config: key 'measure' is required");
    return measure_from_json(read_json(ctx.kv.path("measure")));
}

void write_field(const Context& ctx, const std::string& name, const ScalarFieldd& f) {
    write_text(ctx.out / (name + ".csv"), field_to_csv(f));
    write_text(ctx.out / (name + ".bin"), field_to_binary(f));
}

json atom_z_json(const IrrigationTree<double>& tree, const DiscreteMeasured& mu, double alpha) {
    const auto lv = landscape(tree, mu, alpha);
    const auto za = landscape_at_atoms(tree, lv, mu.size());
    json out = json::array();
    for (std::size_t a = 0; a < mu.size(); ++a) out.push_back(za[Eigen::Index(a)]);
    return out;
}

int cmd_irrigate(const Context& ctx, std::ostream& out) {
    const auto mu = load_measure(ctx);
    const double alpha = ctx.cfg.alpha;
    const auto tree = optimize_plan(mu, alpha, plan_options_for(ctx.cfg, ctx.threads));
    const double cost = irrigation_cost(tree, mu, alpha);
    write_json(ctx.out / "tree.json", tree_to_json(tree, mu, alpha));
    write_json(ctx.out / "cost.json", {{"alpha", alpha},
                                       {"cost", cost},
                                       {"lower_bound", cost_lower_bound(mu, alpha)},
                                       {"total_mass", mu.total_mass()},
                                       {"z_atoms", atom_z_json(tree, mu, alpha)}});
    write_text(ctx.out / "plan.svg", render_svg(ctx.cfg.grid.domain(), mu, &tree, alpha));
    out << "irrigation cost " << format_double(cost) << " (" << tree.size() << " nodes)\n";
    return exit_ok;
}

StateSolution<double> solve_for(const Context& ctx, const DiscreteMeasured& mu) {
    require_on_grid(mu, ctx.cfg.grid);
    return solve_state_detailed(ctx.cfg.grid, mu, ctx.cfg.growth, state_options_for(ctx.cfg));
}

int cmd_solve(const Context& ctx, std::ostream& out) {
    const auto mu = load_measure(ctx);
    const auto sol = solve_for(ctx, mu);
    write_field(ctx, "u", sol.u);
    const double h = harvest(sol.u, mu);
    write_json(ctx.out / "solve.json", {{"harvest", h},
                                        {"u_min", sol.u.min()},
                                        {"u_max", sol.u.max()},
                                        {"residual", sol.residual},
                                        {"picard_iterations", sol.picard_iterations},
                                        {"newton_iterations", sol.newton_iterations}});
    out << "harvest " << format_double(h) << ", min u " << format_double(sol.u.min()) << "\n";
    return exit_ok;
}

struct AdjointData {
    ScalarFieldd psi;
    double delta0, lambda;
};

AdjointData adjoint_for(const Context& ctx, const DiscreteMeasured& mu, const ScalarFieldd& u) {
    const double delta0 = u.min();
    if (!(delta0 > 0.0)) throw SolverError("state is not positive; adjoint bound undefined", delta0);
    auto psi = solve_adjoint(ctx.cfg.grid, mu, u, ctx.cfg.growth, state_options_for(ctx.cfg));
    return {std::move(psi), delta0, adjoint_bound_lambda(ctx.cfg.growth, delta0)};
}

int cmd_adjoint(const Context& ctx, std::ostream& out) {
    const auto mu = load_measure(ctx);
    const auto sol = solve_for(ctx, mu);
    const auto adj = adjoint_for(ctx, mu, sol.u);
    const auto phi = phi_field(sol.u, adj.psi);
    write_field(ctx, "psi", adj.psi);
    write_field(ctx, "phi", phi);
    const double bound = adj.lambda * ctx.cfg.growth.u_max + 1.0;
    write_json(ctx.out / "adjoint.json", {{"delta0", adj.delta0},
                                          {"lambda", adj.lambda},
                                          {"psi_min", adj.psi.min()},
                                          {"psi_max", adj.psi.max()},
                                          {"psi_bound", bound},
                                          {"phi_min", phi.min()},
                                          {"phi_max", phi.max()}});
    out << "psi in [" << format_double(adj.psi.min()) << ", " << format_double(adj.psi.max()) << "], bound "
        << format_double(bound) << "\n";
    return exit_ok;
}

int cmd_optimize(const Context& ctx, std::ostream& out) {
    const auto mu0 = load_measure(ctx);
    AscentOptions opt;
    opt.threads = ctx.threads;
    const auto res = ascend_measure(ctx.cfg, mu0, opt);
    const auto& fin = res.final_state;

    std::string lines;
    for (const auto& r : res.trace.records) lines += trace_record_to_json(r).dump() + "\n";
    write_text(ctx.out / "trace.jsonl", lines);

    const auto path = path_inequality_check(fin.u, res.psi, fin.tree, fin.mu, ctx.cfg.c, ctx.cfg.alpha,
                                            ctx.cfg.path_tolerance * ctx.cfg.growth.u_max);
    double sign_min = 0.0; // min over atoms of (1 - psi) mass
    for (const auto& a : fin.mu.atoms()) sign_min = std::min(sign_min, (1.0 - res.psi.at_node(a.position)) * a.mass);
    json report = report_to_json(res.report);
    report["status"] = res.status;
    report["accepted_steps"] = res.trace.accepted_steps();
    report["initial_payoff"] = res.trace.records.front().payoff;
    report["path_inequality"] = path_report_to_json(path);
    report["min_signed_mass"] = sign_min;
    write_json(ctx.out / "report.json", report);
    write_json(ctx.out / "measure.json", measure_to_json(fin.mu));
    write_json(ctx.out / "tree.json", tree_to_json(fin.tree, fin.mu, ctx.cfg.alpha));
    write_field(ctx, "u", fin.u);
    write_field(ctx, "psi", res.psi);
    write_text(ctx.out / "plan.svg", render_svg(ctx.cfg.grid.domain(), fin.mu, &fin.tree, ctx.cfg.alpha));
    out << res.status << " after " << res.trace.records.size() - 1 << " iterations: payoff "
        << format_double(res.trace.records.front().payoff) << " -> " << format_double(fin.payoff) << ", "
        << fin.mu.size() << " atoms, sup residual " << format_double(res.report.sup_residual) << "\n";
    return exit_ok;
}

int cmd_verify(const Context& ctx, std::ostream& out) {
    const auto mu = load_measure(ctx);
    if (!ctx.kv.has("tree")) throw ValidationError("config: key 'tree' is required for verify");
    const auto st = tree_from_json(read_json(ctx.kv.path("tree")));
    const double alpha = ctx.cfg.alpha;
    verify_stored_tree(st, mu);

    const double cost = irrigation_cost(st.tree, mu, alpha);
    const auto lv = landscape(st.tree, mu, alpha);
    for (int v = 0; v < st.tree.size(); ++v)
        if (std::abs(lv[v] - st.z[std::size_t(v)]) > 1e-9 * tolerance_scale(lv[v]))
            throw ValidationError("stored landscape value at node " + std::to_string(v) + " is inconsistent");
    const auto za = landscape_at_atoms(st.tree, lv, mu.size());
    double weighted = 0.0;
    for (std::size_t a = 0; a < mu.size(); ++a)
        if (mu[a].mass > 0.0) weighted += mu[a].mass * za[Eigen::Index(a)];
    if (std::abs(weighted - cost) > 1e-10 * tolerance_scale(cost))
        throw ValidationError("landscape identity violated: sum mass*Z = " + format_double(weighted) + ", cost " +
                              format_double(cost));
    const double lb = cost_lower_bound(mu, alpha);
    if (cost < lb * (1.0 - 1e-12)) throw ValidationError("cost is below the radial lower bound");

    const auto holder = check_holder_bound(st.tree, mu, alpha);
    json result = {{"flux_conservation", "ok"},
                   {"landscape_identity", {{"cost", cost}, {"sum_mass_z", weighted}}},
                   {"lower_bound", {{"bound", lb}, {"cost", cost}}},
                   {"holder_pairs", holder.pairs_checked},
                   {"holder_violations", holder.violations.size()}};

    bool on_grid = true;
    for (const auto& a : mu.atoms()) on_grid = on_grid && ctx.cfg.grid.locate(a.position).has_value();
    if (on_grid && mu.total_mass() > 0.0) {
        const auto sol = solve_for(ctx, mu);
        const double umax = ctx.cfg.growth.u_max;
        if (sol.u.min() < -1e-9 || sol.u.max() > umax * (1.0 + 1e-9))
            throw ValidationError("state leaves [0, u_max]");
        const auto adj = adjoint_for(ctx, mu, sol.u);
        const double bound = adj.lambda * umax + 1.0;
        if (adj.psi.min() < -1e-9 || adj.psi.max() > bound + 1e-9)
            throw ValidationError("adjoint leaves [0, lambda u_max + 1]");
        const auto rep = optimality_residual(sol.u, adj.psi, st.tree, lv, mu, ctx.cfg.c, alpha);
        result["adjoint_bound"] = {{"psi_min", adj.psi.min()}, {"psi_max", adj.psi.max()}, {"bound", bound}};
        result["optimality"] = report_to_json(rep);
    }
    write_json(ctx.out / "verify.json", result);
    out << "verify: all invariants hold (cost " << format_double(cost) << ", " << holder.violations.size()
        << " Holder violations reported)\n";
    return exit_ok;
}

int cmd_report(const Context& ctx, std::ostream& out) {
    const auto mu = load_measure(ctx);
    const double h = ctx.cfg.grid.h();
    std::vector<double> scales = ctx.kv.has("support.scales") ? ctx.kv.get_list("support.scales")
                                                              : std::vector<double>{8 * h, 4 * h, 2 * h, h};
    const auto rows = support_density_report(mu, ctx.cfg.grid, scales);
    write_json(ctx.out / "support.json", support_to_json(rows));
    out << "cell_size  cells  occupied  fraction\n";
    for (const auto& r : rows)
        out << format_double(r.cell_size) << "  " << r.cells << "  " << r.occupied << "  " << format_double(r.fraction)
            << "\n";
    return exit_ok;
}

} // namespace

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names = {"irrigate", "solve", "adjoint", "optimize", "verify", "report"};
    return names;
}

int run(const CommandSpec& spec, std::ostream& out, std::ostream& err) {
    try {
        const Context ctx = make_context(spec);
        if (spec.subcommand == "irrigate") return cmd_irrigate(ctx, out);
        if (spec.subcommand == "solve") return cmd_solve(ctx, out);
        if (spec.subcommand == "adjoint") return cmd_adjoint(ctx, out);
        if (spec.subcommand == "optimize") return cmd_optimize(ctx, out);
        if (spec.subcommand == "verify") return cmd_verify(ctx, out);
        if (spec.subcommand == "report") return cmd_report(ctx, out);
        throw ValidationError("unknown subcommand '" + spec.subcommand + "'");
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return exit_validation;
    } catch (const SolverError& e) {
        err << "solver failure: " << e.what() << " (last residual " << format_double(e.last_residual()) << ")\n";
        return exit_solver;
    }
}

} // namespace rootopt
