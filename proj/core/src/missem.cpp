#include "fedem/missem.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fedem/errors.hpp"

namespace fedem {

std::int64_t MissemData::observed_count() const {
  std::int64_t total = 0;
  for (const auto& s : shards) total += static_cast<std::int64_t>(s.cells.size());
  return total;
}

MissemData MissemData::from_observations(
    int rows, int cols, int servers, const std::vector<Observation>& obs,
    const std::vector<int>& observer_server) {
  MissemData data;
  data.rows = rows;
  data.cols = cols;
  data.shards.resize(servers);
  // per-observer duplicates are invalid; values from different observers on
  // the same (server, cell) are averaged
  std::set<std::pair<int, int>> seen;
  std::vector<std::map<int, std::pair<double, int>>> acc(servers);
  for (const auto& o : obs) {
    if (o.row < 0 || o.row >= rows || o.col < 0 || o.col >= cols)
      throw ModelError("missem: observation index out of the grid");
    if (o.observer < 0 ||
        o.observer >= static_cast<int>(observer_server.size()))
      throw ModelError("missem: observer id out of range");
    const int server = observer_server[o.observer];
    if (server < 0 || server >= servers)
      throw ModelError("missem: server id out of range");
    if (!seen.insert({o.observer, data.cell_id(o.row, o.col)}).second)
      throw ModelError("missem: duplicate observation for one observer");
    auto& slot = acc[server][data.cell_id(o.row, o.col)];
    slot.first += o.value;
    slot.second += 1;
  }
  for (int c = 0; c < servers; ++c) {
    data.shards[c].cells.reserve(acc[c].size());
    data.shards[c].values.reserve(acc[c].size());
    for (const auto& [cell, sum_count] : acc[c]) {
      data.shards[c].cells.push_back(cell);
      data.shards[c].values.push_back(sum_count.first / sum_count.second);
    }
  }
  return data;
}

MissemData MissemData::load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error(path + ": empty triplet file");
  std::vector<Observation> obs;
  std::vector<int> observer_server;
  int rows = 0, cols = 0, servers = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5)
      throw std::runtime_error(path + ": expected 5 columns per row");
    Observation o;
    o.observer = std::stoi(cells[0]);
    const int server = std::stoi(cells[1]);
    o.row = std::stoi(cells[2]);
    o.col = std::stoi(cells[3]);
    o.value = std::stod(cells[4]);
    if (o.observer >= static_cast<int>(observer_server.size()))
      observer_server.resize(o.observer + 1, -1);
    if (observer_server[o.observer] >= 0 &&
        observer_server[o.observer] != server)
      throw std::runtime_error(path + ": observer assigned to two servers");
    observer_server[o.observer] = server;
    rows = std::max(rows, o.row + 1);
    cols = std::max(cols, o.col + 1);
    servers = std::max(servers, server + 1);
    obs.push_back(o);
  }
  for (auto& s : observer_server)
    if (s < 0) s = 0;
  return from_observations(rows, cols, servers, obs, observer_server);
}

void MissemData::save_csv(const std::string& path,
                          const std::vector<Observation>& obs,
                          const std::vector<int>& observer_server) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "observer_id,server_id,row,col,value\n";
  f.precision(17);
  for (const auto& o : obs)
    f << o.observer << ',' << observer_server[o.observer] << ',' << o.row
      << ',' << o.col << ',' << o.value << "\n";
}

LowRankTheta missem_mstep(const Eigen::MatrixXd& s_hat, int rank) {
  if (rank < 1 || rank >= std::min(s_hat.rows(), s_hat.cols()))
    throw std::invalid_argument("missem m-step: rank must lie in [1, min(J,L))");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(s_hat,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  LowRankTheta theta;
  theta.u = svd.matrixU().leftCols(rank) *
            svd.singularValues().head(rank).asDiagonal();
  theta.v = svd.matrixV().leftCols(rank);
  return theta;
}

double cell_statistic(const MissemData::Shard& shard,
                      const Eigen::MatrixXd& theta, int rows, int cell) {
  const auto it =
      std::lower_bound(shard.cells.begin(), shard.cells.end(), cell);
  if (it != shard.cells.end() && *it == cell)
    return shard.values[static_cast<size_t>(it - shard.cells.begin())];
  return theta(cell % rows, cell / rows);
}

CellBatch missem_estep(const MissemData::Shard& shard,
                       const Eigen::MatrixXd& theta, int rows, int batch,
                       Rng& rng) {
  // the batch ranges over the whole grid: cells the server never observed
  // are imputed with the current parameters, which is what moves the
  // estimate toward the parameters on the missing support
  const int grid = static_cast<int>(theta.size());
  CellBatch out;
  if (batch >= grid) {
    out.cells.resize(grid);
    for (int c = 0; c < grid; ++c) out.cells[c] = c;
  } else {
    // Floyd's uniform subset sampling: batch distinct cells
    std::set<int> picks;
    for (int j = grid - batch; j < grid; ++j) {
      const int t = rng.uniform_int(j + 1);
      if (!picks.insert(t).second) picks.insert(j);
    }
    out.cells.assign(picks.begin(), picks.end());
  }
  out.values.reserve(out.cells.size());
  for (int cell : out.cells)
    out.values.push_back(cell_statistic(shard, theta, rows, cell));
  return out;
}

void MissemConfig::validate(const MissemData& data) const {
  if (rank < 1 || rank >= std::min(data.rows, data.cols))
    throw std::invalid_argument("missem: rank must lie in [1, min(J,L))");
  if (gamma <= 0.0) throw std::invalid_argument("missem: gamma must be > 0");
  if (alpha <= 0.0) throw std::invalid_argument("missem: alpha must be > 0");
  if (batch < 1) throw std::invalid_argument("missem: batch must be >= 1");
  if (rounds < 0) throw std::invalid_argument("missem: rounds must be >= 0");
  if (data.servers() < 1)
    throw std::invalid_argument("missem: need at least one server");
}

namespace {

// per-server gap between the full E-step expectation and the estimate
Eigen::VectorXd server_mean_field(const MissemData::Shard& shard,
                                  const Eigen::MatrixXd& theta,
                                  const Eigen::VectorXd& estimate) {
  Eigen::VectorXd full =
      Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size());
  for (size_t idx = 0; idx < shard.cells.size(); ++idx)
    full[shard.cells[idx]] = shard.values[idx];
  return full - estimate;
}

double gaussian_objective(const MissemData& data,
                          const Eigen::MatrixXd& theta) {
  double total = 0.0;
  for (const auto& shard : data.shards) {
    double local = 0.0;
    for (size_t idx = 0; idx < shard.cells.size(); ++idx) {
      const int cell = shard.cells[idx];
      const double t = theta(cell % data.rows, cell / data.rows);
      local += 0.5 * t * t - shard.values[idx] * t;
    }
    total += local;
  }
  return total / static_cast<double>(data.servers());
}

}  // namespace

MissemRun run_missem(const MissemData& data, const MissemConfig& config,
                     const QuantizerSpec& quantizer,
                     std::vector<RoundTrace>* sink) {
  config.validate(data);
  const int q = data.rows * data.cols;
  quantizer.validate(q);
  const int n = data.servers();
  const std::int64_t total_obs = std::max<std::int64_t>(1, data.observed_count());

  MissemRun run;
  Eigen::VectorXd estimate = Eigen::VectorXd::Zero(q);
  std::vector<Eigen::VectorXd> memory(n, Eigen::VectorXd::Zero(q));
  Eigen::VectorXd memory_mean = Eigen::VectorXd::Zero(q);
  std::int64_t bits = 0, ce_evals = 0;

  for (std::int64_t k = 0; k < config.rounds; ++k) {
    const Eigen::MatrixXd theta_mat =
        missem_mstep(Eigen::Map<const Eigen::MatrixXd>(estimate.data(),
                                                       data.rows, data.cols),
                     config.rank)
            .matrix();

    RoundTrace row;
    row.algo = "missem";
    row.t = 0;
    row.k = k;
    const bool diag_round =
        config.diag_every > 0 && k % config.diag_every == 0;
    if (diag_round) {
      Eigen::VectorXd field = Eigen::VectorXd::Zero(q);
      for (const auto& shard : data.shards)
        field += server_mean_field(shard, theta_mat, estimate);
      field /= static_cast<double>(n);
      row.mean_field_norm_sq = field.squaredNorm();
      row.objective = gaussian_objective(data, theta_mat);
    }

    Eigen::VectorXd sum = Eigen::VectorXd::Zero(q);
    for (int c = 0; c < n; ++c) {
      Rng batch_rng = stream_for(config.seed, k, c, StreamPurpose::Batch);
      const CellBatch cells = missem_estep(data.shards[c], theta_mat,
                                           data.rows, config.batch, batch_rng);
      Eigen::VectorXd delta = Eigen::VectorXd::Zero(q);
      for (size_t idx = 0; idx < cells.cells.size(); ++idx) {
        const int cell = cells.cells[idx];
        delta[cell] = cells.values[idx] - estimate[cell] - memory[c][cell];
      }
      Rng quant_rng = stream_for(config.seed, k, c, StreamPurpose::Quantize);
      auto compressed = quantize(quantizer, delta, quant_rng);
      memory[c] += config.alpha * compressed.payload;
      sum += compressed.payload;
      bits += compressed.bit_cost;
      ce_evals += static_cast<std::int64_t>(cells.cells.size());
    }

    const Eigen::VectorXd direction = memory_mean + sum / static_cast<double>(n);
    estimate += config.gamma * direction;
    memory_mean += (config.alpha / static_cast<double>(n)) * sum;

    row.update_norm_sq = direction.squaredNorm();
    row.bits = bits;
    row.ce_evals = ce_evals;
    row.epoch = static_cast<double>(ce_evals) / static_cast<double>(total_obs);
    if (sink) sink->push_back(row);
    run.trace.push_back(std::move(row));

    Eigen::VectorXd recomputed = Eigen::VectorXd::Zero(q);
    for (const auto& v : memory) recomputed += v;
    recomputed /= static_cast<double>(n);
    if ((memory_mean - recomputed).lpNorm<Eigen::Infinity>() >
        1e-9 * (1.0 + memory_mean.lpNorm<Eigen::Infinity>()))
      throw StateError("missem: server memory diverged from worker memories");
  }

  run.estimate =
      Eigen::Map<const Eigen::MatrixXd>(estimate.data(), data.rows, data.cols);
  run.theta = missem_mstep(run.estimate, config.rank);

  run.imputed = run.theta.matrix();
  Eigen::MatrixXd value_sum = Eigen::MatrixXd::Zero(data.rows, data.cols);
  Eigen::MatrixXi value_count = Eigen::MatrixXi::Zero(data.rows, data.cols);
  for (const auto& shard : data.shards) {
    for (size_t idx = 0; idx < shard.cells.size(); ++idx) {
      const int cell = shard.cells[idx];
      value_sum(cell % data.rows, cell / data.rows) += shard.values[idx];
      value_count(cell % data.rows, cell / data.rows) += 1;
    }
  }
  run.column_missing.resize(data.cols);
  for (int col = 0; col < data.cols; ++col) {
    int missing = 0;
    for (int r = 0; r < data.rows; ++r) {
      if (value_count(r, col) > 0)
        run.imputed(r, col) = value_sum(r, col) / value_count(r, col);
      else
        ++missing;
    }
    run.column_missing[col] = missing;
  }
  run.column_totals = run.imputed.colwise().sum().transpose();
  return run;
}

void write_imputed_csv(const std::string& path,
                       const Eigen::MatrixXd& imputed) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.precision(17);
  for (int r = 0; r < imputed.rows(); ++r) {
    for (int c = 0; c < imputed.cols(); ++c) {
      if (c) f << ',';
      f << imputed(r, c);
    }
    f << "\n";
  }
}

void write_trends_csv(const std::string& path,
                      const Eigen::VectorXd& column_totals,
                      const Eigen::VectorXi& column_missing) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "col,total_estimate,missing_cells\n";
  f.precision(17);
  for (int c = 0; c < column_totals.size(); ++c)
    f << c << ',' << column_totals[c] << ',' << column_missing[c] << "\n";
}

MissemSynthetic generate_missem_synthetic(int rows, int cols, int rank,
                                          int servers,
                                          double observed_fraction,
                                          double noise_sd,
                                          std::uint64_t seed) {
  Rng rng = stream_for(seed, 0, 0, StreamPurpose::Data);
  Eigen::MatrixXd a(rows, rank), b(cols, rank);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < rank; ++j) a(r, j) = rng.normal();
  for (int c = 0; c < cols; ++c)
    for (int j = 0; j < rank; ++j) b(c, j) = rng.normal();
  MissemSynthetic out;
  out.truth = a * b.transpose() / std::sqrt(static_cast<double>(rank));

  std::vector<Observation> obs;
  std::vector<int> observer_server(servers);
  for (int s = 0; s < servers; ++s) observer_server[s] = s;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (rng.uniform() < observed_fraction) {
        Observation o;
        o.observer = rng.uniform_int(servers);  // one observer per server
        o.row = r;
        o.col = c;
        o.value = out.truth(r, c) + noise_sd * rng.normal();
        obs.push_back(o);
      }
    }
  }
  out.data = MissemData::from_observations(rows, cols, servers, obs,
                                           observer_server);
  return out;
}

}  // namespace fedem
