#include "sfdm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace sfdm::plot {

namespace {

constexpr double kW = 480, kH = 360, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

double px(double x, double lo, double hi) { return kLeft + (x - lo) / (hi - lo) * (kW - kLeft - kRight); }
double py(double y, double lo, double hi) { return kH - kBottom - (y - lo) / (hi - lo) * (kH - kTop - kBottom); }

std::string frame(const std::string& title, const std::string& xlabel, const std::string& ylabel, double x0,
                  double x1, double y0, double y1) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kW) + "\" height=\"" + num(kH) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kW / 2) + "\" y=\"20\" text-anchor=\"middle\">" + escape(title) + "</text>\n";
  s += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(kW - kLeft - kRight) +
       "\" height=\"" + num(kH - kTop - kBottom) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    s += "<text x=\"" + num(px(xv, x0, x1)) + "\" y=\"" + num(kH - kBottom + 16) + "\" text-anchor=\"middle\">" +
         num(xv) + "</text>\n";
    s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(py(yv, y0, y1) + 4) + "\" text-anchor=\"end\">" + num(yv) +
         "</text>\n";
  }
  s += "<text x=\"" + num(kW / 2) + "\" y=\"" + num(kH - 12) + "\" text-anchor=\"middle\">" + escape(xlabel) +
       "</text>\n";
  s += "<text x=\"14\" y=\"" + num(kH / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " + num(kH / 2) +
       ")\">" + escape(ylabel) + "</text>\n";
  return s;
}

}  // namespace

std::string det_svg(const std::vector<DetPoint>& points, const std::string& title) {
  std::string s = frame(title, "MACER", "BSCER", 0, 1, 0, 1);
  s += "<polyline class=\"det\" fill=\"none\" stroke=\"" + std::string(kColors[0]) + "\" stroke-width=\"1.5\" points=\"";
  for (const auto& p : points) s += num(px(p.macer, 0, 1)) + "," + num(py(p.bscer, 0, 1)) + " ";
  s += "\"/>\n</svg>\n";
  return s;
}

std::string histogram_svg(const std::vector<Series>& series, double tau, const std::string& title,
                          std::size_t bins) {
  const double lo = -1.0, hi = 1.0, width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::vector<double>> density;
  double peak = 0.0;
  for (const auto& sr : series) {
    std::vector<double> h(bins, 0.0);
    for (double v : sr.values) {
      const auto b = static_cast<std::size_t>(std::clamp((v - lo) / width, 0.0, static_cast<double>(bins) - 1));
      h[b] += 1.0;
    }
    for (double& v : h) v = sr.values.empty() ? 0.0 : v / (static_cast<double>(sr.values.size()) * width);
    if (!h.empty()) peak = std::max(peak, *std::max_element(h.begin(), h.end()));
    density.push_back(std::move(h));
  }
  const double top = peak > 0 ? peak * 1.1 : 1.0;
  std::string s = frame(title, "similarity", "density", lo, hi, 0, top);
  std::size_t legend = 0;
  for (std::size_t k = 0; k < series.size(); ++k) {
    if (series[k].values.empty()) continue;
    const char* color = kColors[legend % 4];
    s += "<g class=\"series\" data-name=\"" + escape(series[k].name) + "\" fill=\"" + color +
         "\" fill-opacity=\"0.45\">\n";
    for (std::size_t b = 0; b < bins; ++b) {
      if (density[k][b] == 0.0) continue;
      const double x = px(lo + b * width, lo, hi), y = py(density[k][b], 0, top);
      s += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(px(lo + width, lo, hi) - px(lo, lo, hi)) +
           "\" height=\"" + num(py(0, 0, top) - y) + "\"/>\n";
    }
    s += "</g>\n";
    const double ly = kTop + 14 + 16 * legend;
    s += "<rect x=\"" + num(kLeft + 8) + "\" y=\"" + num(ly - 9) + "\" width=\"10\" height=\"10\" fill=\"" + color +
         "\"/><text x=\"" + num(kLeft + 22) + "\" y=\"" + num(ly) + "\">" + escape(series[k].name) + "</text>\n";
    ++legend;
  }
  if (std::isfinite(tau)) {
    const double x = px(std::clamp(tau, lo, hi), lo, hi);
    s += "<line class=\"tau\" x1=\"" + num(x) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(x) + "\" y2=\"" +
         num(kH - kBottom) + "\" stroke=\"red\" stroke-dasharray=\"2,3\" stroke-width=\"1.5\"/>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace sfdm::plot
