#pragma once

#include "rootopt/irrigation.hpp"

#include <string>

namespace rootopt {

struct SvgStyle {
    double pixels_per_unit = 400;
    double max_stroke = 12; // stroke width of the heaviest edge, in pixels
    double atom_radius = 3;
};

/**
 * Static SVG of the domain, the origin, the atoms of mu (area proportional
 * to mass) and the tree, each edge drawn with width proportional to
 * flux^alpha.
 */
std::string render_svg(const Domaind& domain, const DiscreteMeasured& mu, const IrrigationTree<double>* tree,
                       double alpha, const SvgStyle& style = {});

} // namespace rootopt
