#include "fedem/trace.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedem {

const char* const kTraceHeader =
    "algo,epoch,t,k,update_norm_sq,mean_field_norm_sq,objective,bits,"
    "ce_evals,memory_gap";

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

std::string trace_row_csv(const RoundTrace& row) {
  std::ostringstream ss;
  ss << csv_quote(row.algo) << ',' << num(row.epoch) << ',' << row.t << ','
     << row.k << ',' << num(row.update_norm_sq) << ','
     << num(row.mean_field_norm_sq) << ',' << num(row.objective) << ','
     << row.bits << ',' << row.ce_evals << ',' << num(row.memory_gap);
  return ss.str();
}

void write_trace_csv(const std::string& path,
                     const std::vector<RoundTrace>& rows, bool truncated) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << kTraceHeader << '\n';
  for (const auto& row : rows) f << trace_row_csv(row) << '\n';
  if (truncated) f << "TRUNCATED,,,,,,,,,\n";
}

std::vector<RoundTrace> read_trace_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != kTraceHeader)
    throw std::runtime_error(path + ": unexpected trace header");
  std::vector<RoundTrace> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells.resize(10);
    if (cells[0] == "TRUNCATED") continue;
    RoundTrace row;
    row.algo = cells[0];
    auto parse = [](const std::string& s) {
      return s.empty() ? std::numeric_limits<double>::quiet_NaN()
                       : std::stod(s);
    };
    row.epoch = parse(cells[1]);
    row.t = cells[2].empty() ? 0 : std::stoll(cells[2]);
    row.k = cells[3].empty() ? 0 : std::stoll(cells[3]);
    row.update_norm_sq = parse(cells[4]);
    row.mean_field_norm_sq = parse(cells[5]);
    row.objective = parse(cells[6]);
    row.bits = cells[7].empty() ? 0 : std::stoll(cells[7]);
    row.ce_evals = cells[8].empty() ? 0 : std::stoll(cells[8]);
    row.memory_gap = parse(cells[9]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fedem
