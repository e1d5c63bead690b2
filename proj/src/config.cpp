#include "rootopt/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace rootopt {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double d = 0;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw ValidationError("config: key '" + key + "' expects a number, got '" + v + "'");
    return d;
}

} // namespace

const std::vector<std::string>& KeyValues::known_keys() {
    static const std::vector<std::string> keys = {
        "alpha",          "c",
        "domain.xmin",    "domain.xmax",
        "domain.ymin",    "domain.ymax",
        "grid.nx",        "grid.ny",
        "growth.u_max",   "growth.rate",
        "tol_nonlinear",  "tol_linear",
        "tol_optimality", "max_outer_iters",
        "max_plan_moves", "step_size",
        "seed",           "spawn",
        "spawn_trial_fraction", "path_tolerance",
        "measure",        "tree",
        "support.scales",
    };
    return keys;
}

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.find('=') == std::string::npos)
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        kv.set(line);
    }
    return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    KeyValues kv = parse(ss.str(), path.string());
    kv.base_dir_ = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    return kv;
}

void KeyValues::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ValidationError("config: expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void KeyValues::set(const std::string& key, const std::string& value) {
    const auto& keys = known_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
        throw ValidationError("config: unknown key '" + key + "'");
    values_[key] = value;
}

std::string KeyValues::get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
    return has(key) ? parse_double(key, get(key)) : fallback;
}

long KeyValues::get_int(const std::string& key, long fallback) const {
    if (!has(key)) return fallback;
    const double d = parse_double(key, get(key));
    if (d != double(long(d))) throw ValidationError("config: key '" + key + "' expects an integer");
    return long(d);
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    std::string v = get(key);
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return char(std::tolower(ch)); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ValidationError("config: key '" + key + "' expects a boolean");
}

std::vector<double> KeyValues::get_list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_double(key, item));
    }
    return out;
}

std::filesystem::path KeyValues::path(const std::string& key) const {
    const std::filesystem::path p = get(key);
    return p.is_absolute() ? p : base_dir_ / p;
}

RunConfigd make_run_config(const KeyValues& kv) {
    RunConfigd cfg;
    const Domaind domain({kv.get_double("domain.xmin", 0.5), kv.get_double("domain.ymin", -0.5)},
                         {kv.get_double("domain.xmax", 1.5), kv.get_double("domain.ymax", 0.5)});
    const int nx = int(kv.get_int("grid.nx", 33));
    cfg.grid = kv.has("grid.ny") ? Gridd(domain, nx, int(kv.get_int("grid.ny", 0))) : Gridd::with_nx(domain, nx);
    cfg.alpha = kv.get_double("alpha", cfg.alpha);
    cfg.c = kv.get_double("c", cfg.c);
    cfg.growth = GrowthFunctiond(kv.get_double("growth.u_max", 1.0), kv.get_double("growth.rate", 4.0));
    cfg.tol_nonlinear = kv.get_double("tol_nonlinear", cfg.tol_nonlinear);
    cfg.tol_linear = kv.get_double("tol_linear", cfg.tol_linear);
    cfg.tol_optimality = kv.get_double("tol_optimality", cfg.tol_optimality);
    cfg.max_outer_iters = int(kv.get_int("max_outer_iters", cfg.max_outer_iters));
    cfg.max_plan_moves = int(kv.get_int("max_plan_moves", cfg.max_plan_moves));
    cfg.step_size = kv.get_double("step_size", cfg.step_size);
    const long seed = kv.get_int("seed", 0);
    if (seed < 0) throw ValidationError("config: key 'seed' must be nonnegative");
    cfg.seed = std::uint64_t(seed);
    cfg.spawn = kv.get_bool("spawn", cfg.spawn);
    cfg.spawn_trial_fraction = kv.get_double("spawn_trial_fraction", cfg.spawn_trial_fraction);
    cfg.path_tolerance = kv.get_double("path_tolerance", cfg.path_tolerance);
    cfg.validate();
    return cfg;
}

} // namespace rootopt
