#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace fedem {

/// One diagnostics row. Column order is fixed:
/// algo,epoch,t,k,update_norm_sq,mean_field_norm_sq,objective,bits,ce_evals,memory_gap
///
/// `update_norm_sq` is the squared norm of the stochastic update direction
/// applied during the round; `mean_field_norm_sq` is the exact squared norm
/// of the mean field at the pre-update estimate (the stationarity measure).
/// `epoch` is cumulative conditional-expectation evaluations divided by the
/// total example count; instrumentation passes are excluded from the count.
/// Optional columns are NaN when not sampled and empty in the CSV.
struct RoundTrace {
  std::string algo;
  double epoch = 0.0;
  std::int64_t t = 0;  // outer index (variance-reduced runs), 0 otherwise
  std::int64_t k = 0;  // round / inner index
  double update_norm_sq = std::numeric_limits<double>::quiet_NaN();
  double mean_field_norm_sq = std::numeric_limits<double>::quiet_NaN();
  double objective = std::numeric_limits<double>::quiet_NaN();
  std::int64_t bits = 0;
  std::int64_t ce_evals = 0;
  double memory_gap = std::numeric_limits<double>::quiet_NaN();
};

extern const char* const kTraceHeader;

/// RFC-4180 style field quoting (always safe for the fixed schema, applied
/// anyway for the algo column).
std::string csv_quote(const std::string& field);

std::string trace_row_csv(const RoundTrace& row);

/// Writes header plus one line per row, UTF-8, '\n' line ends. When
/// `truncated` is set, appends a marker row whose algo column is TRUNCATED.
void write_trace_csv(const std::string& path,
                     const std::vector<RoundTrace>& rows,
                     bool truncated = false);

std::vector<RoundTrace> read_trace_csv(const std::string& path);

}  // namespace fedem
