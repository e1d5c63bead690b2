#pragma once

#include "rootopt/elliptic.hpp"
#include "rootopt/optimality.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace rootopt {

using json = nlohmann::ordered_json;

// measures: {"atoms": [{"x": .., "y": .., "mass": ..}, ...]}
json measure_to_json(const DiscreteMeasured& mu);
DiscreteMeasured measure_from_json(const json& j);

/// A tree as stored on disk: the plan plus the per-node flux and landscape it was written with.
struct StoredTree {
    IrrigationTree<double> tree;
    std::vector<double> flux; // flux of the edge into each node; flux[0] is the total mass
    std::vector<double> z;
};

// trees: {"alpha": .., "cost": .., "nodes": [{id, x, y, kind, atom, z}], "edges": [{parent, child, flux}]}
json tree_to_json(const IrrigationTree<double>& tree, const DiscreteMeasured& mu, double alpha);
StoredTree tree_from_json(const json& j);

/**
 * Checks a stored tree against a measure: structure, terminals, and flux
 * conservation (edge flux = own atom mass + outgoing fluxes). Throws
 * ValidationError naming the first violated invariant.
 */
void verify_stored_tree(const StoredTree& st, const DiscreteMeasured& mu, double rel_tol = 1e-9);

json report_to_json(const OptimalityReport<double>& rep);
json path_report_to_json(const PathReport<double>& rep);
json support_to_json(const std::vector<SupportRow<double>>& rows);
json trace_record_to_json(const TraceRecord<double>& rec);
TraceRecord<double> trace_record_from_json(const json& j);

/// Fields as "x,y,value" rows in grid order.
std::string field_to_csv(const ScalarField<double>& f);
ScalarField<double> field_from_csv(const std::string& text);

/**
 * Compact binary grid: int32 nx, int32 ny, float64 xmin, ymin, xmax, ymax,
 * then nx*ny float64 values row-major; everything little-endian.
 */
std::string field_to_binary(const ScalarField<double>& f);
ScalarField<double> field_from_binary(const std::string& bytes);

// file helpers; write_text throws ValidationError when the file cannot be written
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);

/// Shortest decimal that round-trips.
std::string format_double(double v);

} // namespace rootopt
