#pragma once

#include <string>
#include <vector>

#include "pspo/pspo.hpp"

namespace pspo {

// Shortest round-trippable formatting used for every float that lands in a CSV
// cell, so artifacts are byte-stable across runs.
std::string format_g9(double x);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Cells must not contain commas or newlines; writers here never produce them.
void write_csv(const std::string& path, const CsvTable& table);
CsvTable read_csv(const std::string& path);

// Per-iteration training metrics. Vector-valued cells (belief weights) join
// their entries with ';' so the file stays one row per iteration.
std::vector<std::string> iteration_csv_header();
std::vector<std::string> iteration_csv_row(const IterationReport& report,
                                           std::uint64_t seed);

}  // namespace pspo
