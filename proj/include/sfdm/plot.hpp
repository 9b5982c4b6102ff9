#pragma once

#include <string>
#include <vector>

#include "sfdm/metrics.hpp"

namespace sfdm::plot {

/// MACER against BSCER, one polyline vertex per DET point.
std::string det_svg(const std::vector<DetPoint>& points, const std::string& title);

struct Series {
  std::string name;
  std::vector<double> values;
};

/// Overlaid density histograms over [-1, 1] with the decision threshold as a
/// red dotted line. Empty series are skipped.
std::string histogram_svg(const std::vector<Series>& series, double tau, const std::string& title,
                          std::size_t bins = 40);

}  // namespace sfdm::plot
