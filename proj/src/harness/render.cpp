#include "coopbev/harness/render.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "coopbev/ad/tensor.hpp"

namespace coopbev::harness {
namespace {

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

void polygon(std::ostringstream& out, double extent, const detect::BoxBEV& b, const char* color) {
  out << "<polygon points=\"";
  auto corners = detect::box_corners(b);
  for (int k = 0; k < 4; ++k) {
    geom::Vec2 p = svg_point(extent, corners[k]);
    out << (k ? " " : "") << fmt2(p.x) << "," << fmt2(p.y);
  }
  out << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
}

}  // namespace

geom::Vec2 svg_point(double extent_m, geom::Vec2 world) {
  return {(world.x + extent_m / 2) * kPxPerMeter, (extent_m / 2 - world.y) * kPxPerMeter};
}

std::string render_svg(const sim::Scenario& s, const std::vector<detect::Detection>& dets,
                       const std::vector<detect::BoxBEV>& gts, const RangeConfig& ranges) {
  const double extent = s.extent_m;
  const double side = extent * kPxPerMeter;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt2(side) << "\" height=\""
      << fmt2(side) << "\" viewBox=\"0 0 " << fmt2(side) << " " << fmt2(side) << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << fmt2(side) << "\" height=\"" << fmt2(side)
      << "\" fill=\"#fbfbf8\" stroke=\"#30343a\" stroke-width=\"2\"/>\n";

  for (const sim::AgentSpec& a : s.agents) {
    const char* color = a.modality == attn::Modality::kLidar ? "#3a7bd5" : "#e08a2e";
    double range = a.modality == attn::Modality::kLidar ? ranges.lidar : ranges.camera;
    geom::Vec2 c = svg_point(extent, {a.pose.x, a.pose.y});
    out << "<circle cx=\"" << fmt2(c.x) << "\" cy=\"" << fmt2(c.y) << "\" r=\""
        << fmt2(range * kPxPerMeter) << "\" fill=\"" << color << "\" fill-opacity=\"0.06\" stroke=\""
        << color << "\" stroke-opacity=\"0.4\" stroke-width=\"1\"/>\n";
  }

  for (const detect::BoxBEV& g : gts) polygon(out, extent, g, "#1a9c4b");
  for (const detect::Detection& d : dets) polygon(out, extent, d.box, "#d03a3a");

  for (const sim::AgentSpec& a : s.agents) {
    const char* color = a.modality == attn::Modality::kLidar ? "#3a7bd5" : "#e08a2e";
    geom::Vec2 c = svg_point(extent, {a.pose.x, a.pose.y});
    geom::Vec2 tip = svg_point(extent, {a.pose.x + 2.0 * std::cos(a.pose.yaw),
                                        a.pose.y + 2.0 * std::sin(a.pose.yaw)});
    out << "<circle cx=\"" << fmt2(c.x) << "\" cy=\"" << fmt2(c.y) << "\" r=\"5\" fill=\"" << color
        << "\"/>\n";
    out << "<line x1=\"" << fmt2(c.x) << "\" y1=\"" << fmt2(c.y) << "\" x2=\"" << fmt2(tip.x)
        << "\" y2=\"" << fmt2(tip.y) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
  }

  out << "</svg>\n";
  return out.str();
}

void save_svg(const std::string& path, const std::string& svg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ad::ConfigError("cannot write " + path);
  out << svg;
}

}  // namespace coopbev::harness
