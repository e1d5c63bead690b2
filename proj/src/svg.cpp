#include "rootopt/svg.hpp"

#include "rootopt/io.hpp"

#include <algorithm>
#include <cmath>

namespace rootopt {

namespace {

std::string num(double v) {
    // pixel coordinates to 0.01
    const double r = std::round(v * 100.0) / 100.0;
    return format_double(r == 0.0 ? 0.0 : r);
}

} // namespace

std::string render_svg(const Domaind& domain, const DiscreteMeasured& mu, const IrrigationTree<double>* tree,
                       double alpha, const SvgStyle& style) {
    const double margin = 0.05 * std::max(domain.width(), domain.height());
    const double x0 = std::min(0.0, domain.rect_min().x()) - margin;
    const double x1 = std::max(0.0, domain.rect_max().x()) + margin;
    const double y0 = std::min(0.0, domain.rect_min().y()) - margin;
    const double y1 = std::max(0.0, domain.rect_max().y()) + margin;
    const double s = style.pixels_per_unit;
    const auto px = [&](double x) { return num((x - x0) * s); };
    const auto py = [&](double y) { return num((y1 - y) * s); }; // y up

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num((x1 - x0) * s) + "\" height=\"" +
           num((y1 - y0) * s) + "\">\n";
    out += "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<rect x=\"" + px(domain.rect_min().x()) + "\" y=\"" + py(domain.rect_max().y()) + "\" width=\"" +
           num(domain.width() * s) + "\" height=\"" + num(domain.height() * s) +
           "\" fill=\"#eef5ea\" stroke=\"#6a8f5b\" stroke-width=\"1\"/>\n";

    if (tree && tree->size() > 1) {
        const auto fm = compute_fluxes(*tree, mu);
        const double top = std::pow(fm[0], alpha);
        out += "<g stroke=\"#6b4423\" stroke-linecap=\"round\" fill=\"none\">\n";
        for (int v = 1; v < tree->size(); ++v) {
            const auto& a = tree->position(tree->parent(v));
            const auto& b = tree->position(v);
            const double w = std::max(0.5, style.max_stroke * std::pow(fm[v], alpha) / top);
            out += "<line x1=\"" + px(a.x()) + "\" y1=\"" + py(a.y()) + "\" x2=\"" + px(b.x()) + "\" y2=\"" +
                   py(b.y()) + "\" stroke-width=\"" + num(w) + "\"/>\n";
        }
        out += "</g>\n";
    }

    double mmax = 0.0;
    for (const auto& a : mu.atoms()) mmax = std::max(mmax, a.mass);
    out += "<g fill=\"#c0392b\">\n";
    for (const auto& a : mu.atoms()) {
        if (!(a.mass > 0.0)) continue;
        const double r = std::max(1.0, style.atom_radius * std::sqrt(a.mass / mmax));
        out += "<circle cx=\"" + px(a.position.x()) + "\" cy=\"" + py(a.position.y()) + "\" r=\"" + num(r) + "\"/>\n";
    }
    out += "</g>\n";
    out += "<circle cx=\"" + px(0.0) + "\" cy=\"" + py(0.0) + "\" r=\"4\" fill=\"black\"/>\n";
    out += "</svg>\n";
    return out;
}

} // namespace rootopt
