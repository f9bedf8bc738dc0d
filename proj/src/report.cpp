#include "feataug/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace feataug::report {

using harness::Cell;
using harness::MetricsRow;
using harness::MetricsTable;
using nlohmann::json;

namespace {

const char* const kTransformCols[5] = {"RRC", "RHF", "RR", "GB", "GN"};

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError("csv: not a number: '" + s + "'");
  }
  if (used != s.size()) throw FormatError("csv: not a number: '" + s + "'");
  return v;
}

}  // namespace

std::string render_markdown(const MetricsTable& t) {
  const std::size_t nd = t.domains.size();
  // Column maxima on the displayed (rounded) values, so ties look like ties.
  std::vector<std::string> best(nd + 1);
  std::vector<double> best_v(nd + 1, -1.0);
  for (const auto& r : t.rows)
    for (std::size_t c = 0; c <= nd; ++c) {
      const double v = c < nd ? r.cells[c].mean : r.average;
      const double shown = std::stod(fixed2(v));
      if (shown > best_v[c]) best_v[c] = shown;
    }

  std::ostringstream out;
  out << "| Method |";
  if (t.ablation)
    for (const char* name : kTransformCols) out << " " << name << " |";
  for (const auto& d : t.domains) out << " " << d << " |";
  out << " Average |\n|---|";
  if (t.ablation)
    for (int i = 0; i < 5; ++i) out << ":-:|";
  for (std::size_t i = 0; i <= nd; ++i) out << "---:|";
  out << "\n";
  for (const auto& r : t.rows) {
    out << "| " << r.method << " |";
    if (t.ablation)
      for (std::size_t i = 0; i < 5; ++i) out << " " << (i < r.transforms.size() && r.transforms[i] ? "✓" : "−") << " |";
    for (std::size_t c = 0; c <= nd; ++c) {
      const double v = c < nd ? r.cells[c].mean : r.average;
      std::string text = fixed2(v);
      const bool top = std::stod(text) == best_v[c];
      if (top) text = "**" + text + "**";
      if (c < nd && r.cells[c].runs > 1) text += " ± " + fixed2(r.cells[c].std);
      out << " " << text << " |";
    }
    out << "\n";
  }
  return out.str();
}

std::string render_csv(const MetricsTable& t) {
  std::ostringstream out;
  out << "method";
  if (t.ablation)
    for (const char* name : kTransformCols) out << "," << name;
  for (const auto& d : t.domains) out << "," << d << "_mean," << d << "_std," << d << "_runs";
  out << ",average\n";
  for (const auto& r : t.rows) {
    out << r.method;
    if (t.ablation)
      for (std::size_t i = 0; i < 5; ++i) out << "," << (i < r.transforms.size() && r.transforms[i] ? 1 : 0);
    for (const auto& c : r.cells) out << "," << exact(c.mean) << "," << exact(c.std) << "," << c.runs;
    out << "," << exact(r.average) << "\n";
  }
  return out.str();
}

MetricsTable parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("csv: empty input");
  const auto header = split(line, ',');
  if (header.empty() || header.front() != "method" || header.back() != "average")
    throw FormatError("csv: header must start with 'method' and end with 'average'");
  MetricsTable t;
  std::size_t col = 1;
  if (header.size() > 1 && header[1] == "RRC") {
    t.ablation = true;
    for (std::size_t i = 0; i < 5; ++i)
      if (col + i >= header.size() || header[col + i] != kTransformCols[i])
        throw FormatError("csv: expected indicator columns RRC,RHF,RR,GB,GN");
    col += 5;
  }
  const std::size_t body = header.size() - 1 - col;
  if (body % 3 != 0) throw FormatError("csv: each domain needs _mean, _std and _runs columns");
  for (std::size_t i = col; i < header.size() - 1; i += 3) {
    const auto& h = header[i];
    if (h.size() < 6 || h.substr(h.size() - 5) != "_mean") throw FormatError("csv: bad column '" + h + "'");
    const std::string d = h.substr(0, h.size() - 5);
    if (header[i + 1] != d + "_std" || header[i + 2] != d + "_runs")
      throw FormatError("csv: columns for domain '" + d + "' out of order");
    t.domains.push_back(d);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) throw FormatError("csv: row has " + std::to_string(f.size()) + " fields, expected " +
                                                     std::to_string(header.size()));
    MetricsRow r;
    r.method = f[0];
    std::size_t k = 1;
    if (t.ablation)
      for (; k < col; ++k) {
        if (f[k] != "0" && f[k] != "1") throw FormatError("csv: indicator must be 0 or 1");
        r.transforms.push_back(f[k] == "1");
      }
    for (; k + 1 < f.size(); k += 3) {
      const double runs = parse_double(f[k + 2]);
      if (runs < 0 || runs != std::floor(runs)) throw FormatError("csv: run count must be a whole number");
      r.cells.push_back(Cell{parse_double(f[k]), parse_double(f[k + 1]), static_cast<std::size_t>(runs)});
    }
    r.average = parse_double(f.back());
    t.rows.push_back(std::move(r));
  }
  return t;
}

MetricsTable load_table(const std::filesystem::path& dir) {
  const auto path = dir / "results.json";
  std::ifstream f(path);
  if (!f) throw FormatError("no results.json in " + dir.string());
  try {
    const json doc = json::parse(f);
    std::vector<harness::RunResult> runs;
    for (const auto& r : doc.at("runs")) runs.push_back(harness::RunResult::from_json(r));
    if (runs.empty()) throw FormatError(path.string() + " holds no runs");
    MetricsTable t = MetricsTable::from_runs(runs, doc.at("domains").get<std::vector<std::string>>());
    t.ablation = doc.at("ablation").get<bool>();
    if (t.ablation) {
      const auto& stored = doc.at("table").at("rows");
      if (stored.size() != t.rows.size()) throw FormatError(path.string() + ": table rows do not match runs");
      for (std::size_t i = 0; i < t.rows.size(); ++i) t.rows[i].transforms = stored[i].at("transforms").get<std::vector<bool>>();
    }
    return t;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace feataug::report
