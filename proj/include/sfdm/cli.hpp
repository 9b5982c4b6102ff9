#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sfdm/metrics.hpp"

namespace sfdm::cli {

/// Process exit codes.
enum ExitCode : int { kOk = 0, kUsage = 2, kIo = 3, kStateMismatch = 4 };

/// Runs one command line (args excludes the program name) and returns the
/// exit code. Errors are reported on err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// MAP verification outcomes as CSV rows morph_index,attempt,frs,verified.
std::string format_outcomes_csv(const MapOutcomes& outcomes);
MapOutcomes parse_outcomes_csv(const std::string& text);
/// Rows r,c,value.
std::string format_map_csv(const std::vector<std::vector<double>>& map);

}  // namespace sfdm::cli
