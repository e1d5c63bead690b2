#pragma once

#include "rootopt/core.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rootopt {

/**
 * Flat UTF-8 key-value configuration.
 *
 *   # comment
 *   alpha = 0.75
 *   grid.nx = 33
 *
 * Keys are matched exactly; an unknown key is an error naming that key.
 * Recognized keys and defaults:
 *
 *   alpha                 0.75     irrigation exponent, in (0,1)
 *   c                     0.2      transport price
 *   domain.xmin/xmax      0.5/1.5  rectangle bounds
 *   domain.ymin/ymax     -0.5/0.5
 *   grid.nx               33       nodes across; grid.ny defaults to matching spacing
 *   grid.ny
 *   growth.u_max          1        logistic source parameters
 *   growth.rate           4
 *   tol_nonlinear         1e-10    state/adjoint residual tolerance (relative)
 *   tol_linear            1e-12    conjugate-gradient relative tolerance
 *   tol_optimality        1e-6     stationarity tolerance, relative to u_max
 *   max_outer_iters       200      ascent iteration budget
 *   max_plan_moves        200      topology moves per plan search
 *   step_size             1        initial ascent step
 *   seed                  0
 *   spawn                 true     try new atoms during ascent
 *   spawn_trial_fraction  0.05     trial mass / mean atom mass
 *   path_tolerance        1e-3     path inequality tolerance, relative to u_max
 *   measure                        measure JSON (relative to the config file)
 *   tree                           tree JSON for `verify`
 *   support.scales                 comma-separated cell sizes for `report`
 */
class KeyValues {
public:
    static const std::vector<std::string>& known_keys();

    static KeyValues parse(const std::string& text, const std::string& origin = "<config>");
    static KeyValues load(const std::filesystem::path& path);

    /// Applies "key=value"; throws ValidationError on malformed input or unknown key.
    void set(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback = "") const;
    double get_double(const std::string& key, double fallback) const;
    long get_int(const std::string& key, long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_list(const std::string& key) const;

    /// Resolves a path-valued key relative to the directory of the config file.
    std::filesystem::path path(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    const std::filesystem::path& base_dir() const { return base_dir_; }
    void set_base_dir(std::filesystem::path dir) { base_dir_ = std::move(dir); }

private:
    std::map<std::string, std::string> values_;
    std::filesystem::path base_dir_ = ".";
};

RunConfigd make_run_config(const KeyValues& kv);

} // namespace rootopt
