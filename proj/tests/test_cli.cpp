#include "helpers.hpp"

#include "rootopt/cli.hpp"
#include "rootopt/io.hpp"

#include <doctest.h>
#include <sstream>

using namespace rootopt;

namespace {

const std::string fixture_cfg = std::string(ROOTOPT_FIXTURES) + "/single_atom.cfg";

int run_cli(CommandSpec spec, std::string* err_text = nullptr) {
    std::ostringstream out, err;
    const int code = run(spec, out, err);
    if (err_text) *err_text = err.str();
    return code;
}

CommandSpec spec_for(const std::string& sub, const std::filesystem::path& out, std::vector<std::string> overrides = {}) {
    CommandSpec s;
    s.subcommand = sub;
    s.config = fixture_cfg;
    s.out_dir = out;
    s.overrides = std::move(overrides);
    return s;
}

} // namespace

TEST_CASE("irrigate writes the straight single-atom plan") {
    const auto dir = testing::temp_dir("cli_irrigate");
    REQUIRE(run_cli(spec_for("irrigate", dir)) == exit_ok);
    const auto cost = read_json(dir / "cost.json");
    const double expected = Vector2d(1.0, 0.25).norm() * std::pow(0.3, 0.75);
    CHECK(cost["cost"].get<double>() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(cost["lower_bound"].get<double>() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::filesystem::exists(dir / "plan.svg"));
    CHECK(std::filesystem::exists(dir / "tree.json"));
}

TEST_CASE("verify accepts stored plans and rejects tampered ones") {
    const auto dir = testing::temp_dir("cli_verify");
    REQUIRE(run_cli(spec_for("irrigate", dir)) == exit_ok);
    CHECK(run_cli(spec_for("verify", dir, {"tree=" + (dir / "tree.json").string()})) == exit_ok);
    const auto v = read_json(dir / "verify.json");
    CHECK(v["flux_conservation"] == "ok");

    auto tree = read_json(dir / "tree.json");
    tree["edges"][0]["flux"] = 0.31;
    write_json(dir / "bad.json", tree);
    std::string err;
    CHECK(run_cli(spec_for("verify", dir, {"tree=" + (dir / "bad.json").string()}), &err) == exit_validation);
    CHECK(err.find("flux conservation") != std::string::npos);
}

TEST_CASE("configuration errors exit with the validation status") {
    const auto dir = testing::temp_dir("cli_errors");
    std::string err;
    CHECK(run_cli(spec_for("solve", dir, {"alpha_typo=0.5"}), &err) == exit_validation);
    CHECK(err.find("alpha_typo") != std::string::npos);
    CHECK(run_cli(spec_for("dance", dir)) == exit_validation);
    auto missing = spec_for("solve", dir);
    missing.config = dir / "nope.cfg";
    CHECK(run_cli(missing) == exit_validation);
    CHECK(run_cli(spec_for("solve", dir, {"measure=" + (dir / "nope.json").string()})) == exit_validation);
}

TEST_CASE("solve, adjoint and report outputs") {
    const auto dir = testing::temp_dir("cli_fields");
    REQUIRE(run_cli(spec_for("solve", dir)) == exit_ok);
    const auto u = field_from_binary(read_text(dir / "u.bin"));
    CHECK(u.grid().nx() == 17);
    CHECK(u.max() <= 1.0 + 1e-9);
    CHECK(field_from_csv(read_text(dir / "u.csv")).values() == u.values());

    REQUIRE(run_cli(spec_for("adjoint", dir)) == exit_ok);
    const auto adj = read_json(dir / "adjoint.json");
    CHECK(adj["psi_min"].get<double>() >= -1e-9);
    CHECK(adj["psi_max"].get<double>() <= adj["psi_bound"].get<double>() + 1e-9);

    REQUIRE(run_cli(spec_for("report", dir, {"support.scales=1.0,0.5"})) == exit_ok);
    const auto sup = read_json(dir / "support.json");
    REQUIRE(sup.size() == 2);
    CHECK(sup[0]["occupied"] == 1);
}

TEST_CASE("optimize is deterministic and never loses payoff") {
    const auto a = testing::temp_dir("cli_opt_a"), b = testing::temp_dir("cli_opt_b");
    auto sa = spec_for("optimize", a, {"spawn=false"});
    auto sb = spec_for("optimize", b, {"spawn=false"});
    sb.threads = 3;
    REQUIRE(run_cli(sa) == exit_ok);
    REQUIRE(run_cli(sb) == exit_ok);
    for (const char* f : {"trace.jsonl", "report.json", "measure.json", "tree.json", "u.bin", "psi.bin"})
        CHECK(read_text(a / f) == read_text(b / f));
    const auto rep = read_json(a / "report.json");
    CHECK(rep["payoff"].get<double>() >= rep["initial_payoff"].get<double>());
}
