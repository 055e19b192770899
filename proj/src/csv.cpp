#include "pspo/csv.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pspo {

namespace {

std::string join_values(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ';';
    out += format_g9(xs[i]);
  }
  return out;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace

std::string format_g9(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

void write_csv(const std::string& path, const CsvTable& table) {
  if (table.header.empty()) throw std::invalid_argument("csv: empty header");
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    if (table.rows[r].size() != table.header.size())
      throw std::invalid_argument("csv: row " + std::to_string(r + 1) + " has " +
                                  std::to_string(table.rows[r].size()) +
                                  " cells, header has " +
                                  std::to_string(table.header.size()));
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ostringstream out;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i) out << ',';
    out << table.header[i];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("csv: cannot open " + path + " for writing");
  f << out.str();
  if (!f) throw std::runtime_error("csv: write failed for " + path);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("csv: cannot open " + path);
  CsvTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells = split_line(line);
    if (table.header.empty()) {
      table.header = std::move(cells);
      continue;
    }
    if (cells.size() != table.header.size())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(table.header.size()) + " cells, got " +
                               std::to_string(cells.size()));
    table.rows.push_back(std::move(cells));
  }
  if (table.header.empty()) throw std::runtime_error("csv: " + path + " has no header");
  return table;
}

std::vector<std::string> iteration_csv_header() {
  return {"iteration",     "seed",
          "variant",       "mean_target",
          "target_variance", "variance_bound",
          "jreg_estimate", "exact_j",
          "mixture_j_before", "mixture_j_after",
          "kl_step",       "lambda_used",
          "improvement_condition", "monotone_ok",
          "uncertainty_sample", "td_target_sample",
          "prior",         "posterior"};
}

std::vector<std::string> iteration_csv_row(const IterationReport& report,
                                           std::uint64_t seed) {
  return {std::to_string(report.iteration),
          std::to_string(seed),
          report.variant,
          format_g9(report.mean_target),
          format_g9(report.target_variance),
          format_g9(report.variance_bound),
          format_g9(report.jreg_estimate),
          format_g9(report.exact_j),
          format_g9(report.mixture_j_before),
          format_g9(report.mixture_j_after),
          format_g9(report.kl_step),
          format_g9(report.lambda_used),
          std::to_string(report.improvement_condition),
          std::to_string(report.monotone_ok),
          format_g9(report.uncertainty_sample),
          format_g9(report.td_target_sample),
          join_values(report.prior),
          join_values(report.posterior)};
}

}  // namespace pspo
