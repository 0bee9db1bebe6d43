#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedem/quantizer.hpp"
#include "fedem/rng.hpp"
#include "fedem/statistic.hpp"
#include "fedem/trace.hpp"

namespace fedem {

/// One field observation: observer saw `value` at (row, col).
struct Observation {
  int observer = 0;
  int row = 0;
  int col = 0;
  double value = 0.0;
};

/// Observations grouped by server. The statistic lives on the rows x cols
/// grid; cells are flattened column-major (cell = col * rows + row) to match
/// the dense state layout. Duplicate (server, cell) observations are
/// averaged at ingestion.
struct MissemData {
  int rows = 0;
  int cols = 0;

  struct Shard {
    std::vector<int> cells;      // sorted, unique, flattened ids
    std::vector<double> values;  // aligned with cells
  };
  std::vector<Shard> shards;  // one per server

  int servers() const { return static_cast<int>(shards.size()); }
  std::int64_t observed_count() const;
  int cell_id(int row, int col) const { return col * rows + row; }

  static MissemData from_observations(int rows, int cols, int servers,
                                      const std::vector<Observation>& obs,
                                      const std::vector<int>& observer_server);

  /// Plain triplet CSV with header observer_id,server_id,row,col,value.
  static MissemData load_csv(const std::string& path);
  static void save_csv(const std::string& path,
                       const std::vector<Observation>& obs,
                       const std::vector<int>& observer_server);
};

/// Rank-constrained parameters, theta = u * v^T.
struct LowRankTheta {
  Eigen::MatrixXd u;  // rows x rank
  Eigen::MatrixXd v;  // cols x rank
  Eigen::MatrixXd matrix() const { return u * v.transpose(); }
};

/// Best Frobenius rank-r approximation via truncated SVD (the m-step of the
/// Gaussian entry model with no penalty).
LowRankTheta missem_mstep(const Eigen::MatrixXd& s_hat, int rank);

/// E-step statistic of one cell: the observed value where the server covers
/// the cell, the current parameter estimate elsewhere.
double cell_statistic(const MissemData::Shard& shard,
                      const Eigen::MatrixXd& theta, int rows, int cell);

/// Sampled batch for one server and round: `batch` distinct grid cells
/// (the whole grid when batch exceeds it) with their E-step statistic
/// values.
struct CellBatch {
  std::vector<int> cells;
  std::vector<double> values;
};
CellBatch missem_estep(const MissemData::Shard& shard,
                       const Eigen::MatrixXd& theta, int rows, int batch,
                       Rng& rng);

struct MissemConfig {
  int rank = 2;
  double gamma = 1e-2;
  double alpha = 0.5;
  int batch = 100;  // sampled cells per server per round
  std::int64_t rounds = 0;
  std::uint64_t seed = 0;
  int diag_every = 1;
  void validate(const MissemData& data) const;
};

struct MissemRun {
  std::vector<RoundTrace> trace;
  Eigen::MatrixXd estimate;  // final statistic matrix
  LowRankTheta theta;
  Eigen::MatrixXd imputed;         // observed values kept, theta elsewhere
  Eigen::VectorXd column_totals;   // per column sum of the imputed matrix
  Eigen::VectorXi column_missing;  // unobserved cells per column
};

/// Federated EM loop for missing-data imputation: same memory-compensated
/// compression and server aggregation as the fedem round, with the
/// cell-sampled E-step and the truncated-SVD m-step. Full participation.
MissemRun run_missem(const MissemData& data, const MissemConfig& config,
                     const QuantizerSpec& quantizer,
                     std::vector<RoundTrace>* sink = nullptr);

void write_imputed_csv(const std::string& path, const Eigen::MatrixXd& imputed);
void write_trends_csv(const std::string& path,
                      const Eigen::VectorXd& column_totals,
                      const Eigen::VectorXi& column_missing);

struct MissemSynthetic {
  MissemData data;
  Eigen::MatrixXd truth;  // the rank-r ground truth parameters
};

/// Rank-r ground truth with unit-scale entries; every cell is observed with
/// probability observed_fraction, assigned to a uniformly random server, and
/// carries Gaussian observation noise.
MissemSynthetic generate_missem_synthetic(int rows, int cols, int rank,
                                          int servers,
                                          double observed_fraction,
                                          double noise_sd, std::uint64_t seed);

}  // namespace fedem
