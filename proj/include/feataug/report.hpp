#pragma once

#include <filesystem>
#include <string>

#include "feataug/harness.hpp"

namespace feataug::report {

/// Markdown table, means and stds to two decimals. The largest displayed mean
/// of every accuracy column is bold; ties are all bold. Ablation tables get
/// RRC/RHF/RR/GB/GN indicator columns (✓ or −).
std::string render_markdown(const harness::MetricsTable& t);

/// Plain CSV with full precision so it parses back to the same table.
std::string render_csv(const harness::MetricsTable& t);

/// Inverse of render_csv. Throws FormatError on malformed input.
harness::MetricsTable parse_csv(const std::string& text);

/// Reads results.json from `dir` and re-aggregates the stored runs.
/// Throws FormatError if it is missing or holds no runs.
harness::MetricsTable load_table(const std::filesystem::path& dir);

}  // namespace feataug::report
