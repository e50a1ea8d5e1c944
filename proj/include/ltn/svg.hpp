// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ltn/model.hpp"
#include "ltn/scene.hpp"

namespace ltn {

struct SvgStyle {
  double width = 480.0;
  double height = 480.0;
  double margin = 24.0;
};

namespace detail {
struct SvgFrame {
  double min_x, min_y, scale, height, margin;
  std::string point(Vec2 p) const {
    std::ostringstream os;
    os.precision(6);
    os << margin + (p.x - min_x) * scale << ',' << height - margin - (p.y - min_y) * scale;
    return os.str();
  }
};

inline std::string svg_polyline(const SvgFrame& f, const std::vector<Vec2>& pts, const std::string& attrs) {
  std::string s = "  <polyline fill=\"none\" " + attrs + " points=\"";
  for (std::size_t i = 0; i < pts.size(); ++i) s += (i ? " " : "") + f.point(pts[i]);
  return s + "\"/>\n";
}
}  // namespace detail

/// History solid black, ground truth dashed green, proposals thin grey,
/// the selected proposal thick red, the most likely mean dotted blue.
inline void write_prediction_svg(std::ostream& out, const PredictionInstance& inst, const Prediction& pred,
                                 const SvgStyle& style = {}) {
  std::vector<Vec2> all(inst.history.begin(), inst.history.end());
  all.insert(all.end(), inst.future.begin(), inst.future.end());
  all.insert(all.end(), pred.most_likely.begin(), pred.most_likely.end());
  for (const auto& p : pred.proposals) all.insert(all.end(), p.positions.begin(), p.positions.end());
  for (const auto& n : inst.neighbor_histories) all.insert(all.end(), n.begin(), n.end());
  double lo_x = std::numeric_limits<double>::infinity(), lo_y = lo_x, hi_x = -lo_x, hi_y = -lo_x;
  for (const auto& p : all) {
    lo_x = std::min(lo_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_x = std::max(hi_x, p.x);
    hi_y = std::max(hi_y, p.y);
  }
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-6});
  const double usable = std::min(style.width, style.height) - 2 * style.margin;
  const detail::SvgFrame f{lo_x, lo_y, usable / span, style.height, style.margin};

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << style.width << "\" height=\"" << style.height
      << "\" viewBox=\"0 0 " << style.width << ' ' << style.height << "\">\n";
  out << "  <title>" << inst.id << "</title>\n";
  out << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& n : inst.neighbor_histories)
    out << detail::svg_polyline(f, n, "stroke=\"#999999\" stroke-width=\"1.5\" class=\"neighbor\"");
  for (std::size_t i = 0; i < pred.proposals.size(); ++i) {
    if (i == pred.selected) continue;
    std::vector<Vec2> pts{inst.last_observed()};
    pts.insert(pts.end(), pred.proposals[i].positions.begin(), pred.proposals[i].positions.end());
    out << detail::svg_polyline(f, pts, "stroke=\"#bbbbbb\" stroke-width=\"0.75\" class=\"proposal\"");
  }
  out << detail::svg_polyline(f, inst.history, "stroke=\"black\" stroke-width=\"2\" class=\"history\"");
  if (!inst.future.empty()) {
    std::vector<Vec2> pts{inst.last_observed()};
    pts.insert(pts.end(), inst.future.begin(), inst.future.end());
    out << detail::svg_polyline(f, pts, "stroke=\"#2a9d3a\" stroke-width=\"2\" stroke-dasharray=\"6,4\" class=\"ground-truth\"");
  }
  if (!pred.most_likely.empty()) {
    std::vector<Vec2> pts{inst.last_observed()};
    pts.insert(pts.end(), pred.most_likely.begin(), pred.most_likely.end());
    out << detail::svg_polyline(f, pts, "stroke=\"#1f5fbf\" stroke-width=\"1.5\" stroke-dasharray=\"2,3\" class=\"most-likely\"");
  }
  if (!pred.proposals.empty()) {
    std::vector<Vec2> pts{inst.last_observed()};
    const auto& s = pred.selected_proposal().positions;
    pts.insert(pts.end(), s.begin(), s.end());
    out << detail::svg_polyline(f, pts, "stroke=\"#d62828\" stroke-width=\"3\" class=\"selected\"");
  }
  out << "</svg>\n";
}

}  // namespace ltn
