#include "rootopt/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace rootopt {

namespace {

const char* kind_name(NodeKind k) {
    switch (k) {
    case NodeKind::root: return "root";
    case NodeKind::steiner: return "steiner";
    case NodeKind::terminal: return "terminal";
    }
    return "?";
}

NodeKind kind_from_name(const std::string& s) {
    if (s == "root") return NodeKind::root;
    if (s == "steiner") return NodeKind::steiner;
    if (s == "terminal") return NodeKind::terminal;
    throw ValidationError("tree: unknown node kind '" + s + "'");
}

template <typename T>
T field(const json& j, const char* key, const char* what) {
    if (!j.is_object() || !j.contains(key)) throw ValidationError(std::string(what) + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(std::string(what) + ": field '" + key + "' has the wrong type");
    }
}

json atoms_to_json(const DiscreteMeasured& mu) {
    json atoms = json::array();
    for (const auto& a : mu.atoms()) atoms.push_back({{"x", a.position.x()}, {"y", a.position.y()}, {"mass", a.mass}});
    return atoms;
}

template <typename T>
void put_le(std::string& out, T v) {
    std::array<char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    out.append(b.data(), b.size());
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw ValidationError("binary field: truncated data");
    std::array<char, sizeof(T)> b;
    std::memcpy(b.data(), in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    pos += sizeof(T);
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

Gridd grid_from_bounds(int nx, int ny, double xmin, double ymin, double xmax, double ymax) {
    if (nx < 2 || ny < 2) throw ValidationError("field: grid needs at least 2 nodes per direction");
    return Gridd(Domaind({xmin, ymin}, {xmax, ymax}), nx, ny);
}

} // namespace

std::string format_double(double v) {
    std::array<char, 64> buf;
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

// ---------------------------------------------------------------- measures

json measure_to_json(const DiscreteMeasured& mu) { return {{"atoms", atoms_to_json(mu)}}; }

DiscreteMeasured measure_from_json(const json& j) {
    if (!j.is_object() || !j.contains("atoms") || !j["atoms"].is_array())
        throw ValidationError("measure: expected an object with an 'atoms' array");
    std::vector<Atomd> atoms;
    for (const auto& a : j["atoms"])
        atoms.push_back({{field<double>(a, "x", "measure"), field<double>(a, "y", "measure")},
                         field<double>(a, "mass", "measure")});
    return DiscreteMeasured(std::move(atoms));
}

// ---------------------------------------------------------------- trees

json tree_to_json(const IrrigationTree<double>& tree, const DiscreteMeasured& mu, double alpha) {
    const auto fm = compute_fluxes(tree, mu);
    const auto z = landscape(tree, fm, alpha);
    json nodes = json::array(), edges = json::array();
    for (int v = 0; v < tree.size(); ++v) {
        const auto& n = tree.node(v);
        nodes.push_back({{"id", v},
                         {"x", n.position.x()},
                         {"y", n.position.y()},
                         {"kind", kind_name(n.kind)},
                         {"atom", n.atom},
                         {"z", z[v]}});
        if (v > 0) edges.push_back({{"parent", tree.parent(v)}, {"child", v}, {"flux", fm[v]}});
    }
    return {{"alpha", alpha},
            {"total_mass", mu.total_mass()},
            {"cost", irrigation_cost(tree, mu, alpha)},
            {"nodes", nodes},
            {"edges", edges}};
}

StoredTree tree_from_json(const json& j) {
    if (!j.is_object() || !j.contains("nodes") || !j["nodes"].is_array() || !j.contains("edges") ||
        !j["edges"].is_array())
        throw ValidationError("tree: expected 'nodes' and 'edges' arrays");
    const auto& nodes = j["nodes"];
    const int n = int(nodes.size());
    if (n == 0) throw ValidationError("tree: no nodes");
    StoredTree st;
    st.flux.assign(std::size_t(n), 0.0);
    st.z.assign(std::size_t(n), 0.0);
    std::vector<TreeNode<double>> parsed(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const auto& nd = nodes[std::size_t(k)];
        if (field<int>(nd, "id", "tree") != k) throw ValidationError("tree: node ids must be 0..n-1 in order");
        parsed[std::size_t(k)] = {{field<double>(nd, "x", "tree"), field<double>(nd, "y", "tree")},
                                  kind_from_name(field<std::string>(nd, "kind", "tree")),
                                  field<int>(nd, "atom", "tree")};
        st.z[std::size_t(k)] = nd.contains("z") ? field<double>(nd, "z", "tree") : 0.0;
    }
    if (parsed[0].kind != NodeKind::root) throw ValidationError("tree: node 0 must be the root");
    std::vector<int> parent(std::size_t(n), -1);
    for (const auto& e : j["edges"]) {
        const int p = field<int>(e, "parent", "tree"), c = field<int>(e, "child", "tree");
        if (c <= 0 || c >= n || p < 0 || p >= n) throw ValidationError("tree: edge refers to a missing node");
        if (parent[std::size_t(c)] >= 0) throw ValidationError("tree: node " + std::to_string(c) + " has two parents");
        parent[std::size_t(c)] = p;
        st.flux[std::size_t(c)] = field<double>(e, "flux", "tree");
    }
    for (int v = 1; v < n; ++v) {
        if (parent[std::size_t(v)] < 0) throw ValidationError("tree: node " + std::to_string(v) + " has no parent");
        if (parsed[std::size_t(v)].kind == NodeKind::root) throw ValidationError("tree: more than one root");
        st.tree.add_node(parsed[std::size_t(v)], parent[std::size_t(v)]);
    }
    st.tree.node(0).position = parsed[0].position;
    st.flux[0] = j.contains("total_mass") ? field<double>(j, "total_mass", "tree") : 0.0;
    return st;
}

void verify_stored_tree(const StoredTree& st, const DiscreteMeasured& mu, double rel_tol) {
    if (st.tree.position(0).norm() != 0.0) throw ValidationError("tree: root is not at the origin");
    validate_tree(st.tree, mu);
    const auto ch = st.tree.children();
    const double scale = tolerance_scale(mu.total_mass());
    for (int v = 1; v < st.tree.size(); ++v) {
        const auto& node = st.tree.node(v);
        double expected = node.kind == NodeKind::terminal ? mu[std::size_t(node.atom)].mass : 0.0;
        for (int c : ch[std::size_t(v)]) expected += st.flux[std::size_t(c)];
        if (std::abs(st.flux[std::size_t(v)] - expected) > rel_tol * scale)
            throw ValidationError("flux conservation violated at node " + std::to_string(v) + ": edge carries " +
                                  format_double(st.flux[std::size_t(v)]) + ", node delivers " +
                                  format_double(expected));
    }
    double out = 0.0;
    for (int c : ch[0]) out += st.flux[std::size_t(c)];
    if (std::abs(out - mu.total_mass()) > rel_tol * scale)
        throw ValidationError("flux conservation violated at the root: outflow " + format_double(out) +
                              ", total mass " + format_double(mu.total_mass()));
}

// ---------------------------------------------------------------- reports and traces

json report_to_json(const OptimalityReport<double>& rep) {
    json atoms = json::array();
    for (const auto& a : rep.atoms)
        atoms.push_back({{"atom", a.atom},
                         {"x", a.position.x()},
                         {"y", a.position.y()},
                         {"mass", a.mass},
                         {"phi", a.phi},
                         {"z", a.z},
                         {"residual", a.residual}});
    return {{"iteration", rep.iteration},
            {"payoff", rep.payoff},
            {"harvest", rep.harvest},
            {"irrigation_cost", rep.irrigation_cost},
            {"sup_residual", rep.sup_residual},
            {"atoms", atoms}};
}

json path_report_to_json(const PathReport<double>& rep) {
    return {{"samples", rep.samples},
            {"violations", rep.violations},
            {"fraction_ok", rep.fraction_ok()},
            {"max_excess", rep.samples ? rep.max_excess : 0.0},
            {"tolerance", rep.tolerance}};
}

json support_to_json(const std::vector<SupportRow<double>>& rows) {
    json out = json::array();
    for (const auto& r : rows)
        out.push_back({{"cell_size", r.cell_size}, {"cells", r.cells}, {"occupied", r.occupied}, {"fraction", r.fraction}});
    return out;
}

json trace_record_to_json(const TraceRecord<double>& rec) {
    return {{"iteration", rec.iteration},
            {"event", rec.event},
            {"accepted", rec.accepted},
            {"payoff", rec.payoff},
            {"sup_residual", rec.sup_residual},
            {"step", rec.step},
            {"atoms", atoms_to_json(rec.measure)}};
}

TraceRecord<double> trace_record_from_json(const json& j) {
    TraceRecord<double> r;
    r.iteration = field<int>(j, "iteration", "trace");
    r.event = field<std::string>(j, "event", "trace");
    r.accepted = field<bool>(j, "accepted", "trace");
    r.payoff = field<double>(j, "payoff", "trace");
    r.sup_residual = field<double>(j, "sup_residual", "trace");
    r.step = field<double>(j, "step", "trace");
    r.measure = measure_from_json({{"atoms", j.at("atoms")}});
    return r;
}

// ---------------------------------------------------------------- fields

std::string field_to_csv(const ScalarField<double>& f) {
    std::string out = "x,y,value\n";
    const auto& g = f.grid();
    for (int k = 0; k < g.size(); ++k) {
        const auto p = g.node(k);
        out += format_double(p.x()) + ',' + format_double(p.y()) + ',' + format_double(f[k]) + '\n';
    }
    return out;
}

ScalarField<double> field_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "x,y,value") throw ValidationError("csv field: missing 'x,y,value' header");
    std::vector<std::array<double, 3>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::array<double, 3> r{};
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (int c = 0; c < 3; ++c) {
            const auto res = std::from_chars(p, end, r[std::size_t(c)]);
            if (res.ec != std::errc()) throw ValidationError("csv field: malformed row '" + line + "'");
            p = res.ptr;
            if (c < 2) {
                if (p == end || *p != ',') throw ValidationError("csv field: malformed row '" + line + "'");
                ++p;
            }
        }
        if (p != end) throw ValidationError("csv field: malformed row '" + line + "'");
        rows.push_back(r);
    }
    std::set<double> xs, ys;
    for (const auto& r : rows) {
        xs.insert(r[0]);
        ys.insert(r[1]);
    }
    const int nx = int(xs.size()), ny = int(ys.size());
    if (std::size_t(nx) * std::size_t(ny) != rows.size()) throw ValidationError("csv field: rows do not form a grid");
    const Gridd g = grid_from_bounds(nx, ny, *xs.begin(), *ys.begin(), *xs.rbegin(), *ys.rbegin());
    VectorX<double> v(g.size());
    for (int k = 0; k < g.size(); ++k) {
        const auto& r = rows[std::size_t(k)];
        const auto node = g.locate({r[0], r[1]});
        if (!node || *node != k) throw ValidationError("csv field: rows are not in grid order");
        v[k] = r[2];
    }
    return ScalarField<double>(g, std::move(v));
}

std::string field_to_binary(const ScalarField<double>& f) {
    const auto& g = f.grid();
    std::string out;
    out.reserve(8 + 32 + 8 * std::size_t(g.size()));
    put_le<std::int32_t>(out, g.nx());
    put_le<std::int32_t>(out, g.ny());
    put_le<double>(out, g.domain().rect_min().x());
    put_le<double>(out, g.domain().rect_min().y());
    put_le<double>(out, g.domain().rect_max().x());
    put_le<double>(out, g.domain().rect_max().y());
    for (int k = 0; k < g.size(); ++k) put_le<double>(out, f[k]);
    return out;
}

ScalarField<double> field_from_binary(const std::string& bytes) {
    std::size_t pos = 0;
    const int nx = get_le<std::int32_t>(bytes, pos);
    const int ny = get_le<std::int32_t>(bytes, pos);
    const double xmin = get_le<double>(bytes, pos), ymin = get_le<double>(bytes, pos);
    const double xmax = get_le<double>(bytes, pos), ymax = get_le<double>(bytes, pos);
    const Gridd g = grid_from_bounds(nx, ny, xmin, ymin, xmax, ymax);
    if (bytes.size() != pos + 8 * std::size_t(g.size())) throw ValidationError("binary field: size does not match header");
    VectorX<double> v(g.size());
    for (int k = 0; k < g.size(); ++k) v[k] = get_le<double>(bytes, pos);
    return ScalarField<double>(g, std::move(v));
}

// ---------------------------------------------------------------- files

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
    if (!out) throw ValidationError("cannot write " + path.string());
}

json read_json(const std::filesystem::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

} // namespace rootopt
