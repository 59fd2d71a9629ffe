#include "bvx/commands.hpp"

#include "bvx/csv.hpp"
#include "bvx/error.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>

namespace bvx {

namespace {

bool is_sweep_file(const std::filesystem::path& p) {
  const auto name = p.filename().string();
  return p.extension() == ".csv" && name.rfind("sweep", 0) == 0;
}

bool overlaps(double lo_a, double hi_a, double lo_b, double hi_b) { return lo_a <= hi_b && lo_b <= hi_a; }

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

ReportOutcome build_report(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && is_sweep_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  ReportOutcome out;
  out.files = files.size();
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + f.string());
    try {
      auto rows = read_sweep_csv(in);
      out.rows.insert(out.rows.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
    } catch (const ParseError& e) {
      throw ParseError(f.string() + ": " + e.what(), e.line());
    }
  }
  std::stable_sort(out.rows.begin(), out.rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return std::tie(a.task, a.width) < std::tie(b.task, b.width);
  });

  std::map<std::string, std::pair<const SweepRow*, const SweepRow*>> extremes;
  for (const auto& row : out.rows) {
    auto [it, fresh] = extremes.try_emplace(row.task, &row, &row);
    if (!fresh) it->second.second = &row;  // rows are sorted by width within a task
  }
  for (const auto& [task, ends] : extremes) {
    const SweepRow& lo = *ends.first;
    const SweepRow& hi = *ends.second;
    if (lo.width == hi.width) continue;
    TrendVerdict v;
    v.task = task;
    v.smallest_width = lo.width;
    v.largest_width = hi.width;
    v.variance_decreases = hi.e_variance < lo.e_variance;
    v.bias_decreases = hi.e_bias < lo.e_bias;
    v.variance_ci_overlap = overlaps(lo.e_variance_lo, lo.e_variance_hi, hi.e_variance_lo, hi.e_variance_hi);
    v.bias_ci_overlap = overlaps(lo.e_bias_lo, lo.e_bias_hi, hi.e_bias_lo, hi.e_bias_hi);
    out.verdicts.push_back(v);
  }
  return out;
}

void print_report(std::ostream& out, const ReportOutcome& report) {
  if (report.rows.empty()) {
    out << "no results found (" << report.files << " sweep file(s) scanned)\n";
    return;
  }
  out << "task                 width    e_bias [lo, hi]                         e_variance [lo, hi]"
         "                     var_samp     var_opt\n";
  for (const auto& r : report.rows) {
    char line[512];
    std::snprintf(line, sizeof line, "%-20s %6lld  %-11s [%-11s %-11s]  %-11s [%-11s %-11s]  %-11s  %-11s\n",
                  r.task.c_str(), static_cast<long long>(r.width), fixed(r.e_bias).c_str(),
                  (fixed(r.e_bias_lo) + ",").c_str(), fixed(r.e_bias_hi).c_str(), fixed(r.e_variance).c_str(),
                  (fixed(r.e_variance_lo) + ",").c_str(), fixed(r.e_variance_hi).c_str(),
                  fixed(r.var_sampling).c_str(), fixed(r.var_optimization).c_str());
    out << line;
  }
  for (const auto& v : report.verdicts) {
    out << v.task << " (width " << v.smallest_width << " -> " << v.largest_width << "): variance "
        << (v.variance_decreases ? "decreases" : "does not decrease")
        << (v.variance_ci_overlap ? " (intervals overlap)" : " (intervals disjoint)") << ", bias "
        << (v.bias_decreases ? "decreases" : "does not decrease")
        << (v.bias_ci_overlap ? " (intervals overlap)" : " (intervals disjoint)") << '\n';
  }
}

}  // namespace bvx
