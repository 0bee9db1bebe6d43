#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedem/quantizer.hpp"
#include "fedem/statistic.hpp"
#include "fedem/trace.hpp"

namespace fedem {

enum class Algorithm { FedEm, FedEmPP, VrFedEm, Naive, ExactEm, MissEm };

std::string algorithm_name(Algorithm a);

/// [model] section. Exactly one kind is active; unrelated fields keep their
/// defaults and are rejected if set.
struct ModelSection {
  std::string kind = "gmm-synthetic";

  // gmm-synthetic / gmm-file
  int components = 2;
  int dim = 2;
  int workers = 0;
  int total = 0;  // total examples, divisible by workers
  std::string split = "iid";
  Eigen::VectorXd weights;  // empty -> uniform
  Eigen::MatrixXd means;    // components x dim; empty -> spread defaults
  Eigen::MatrixXd sigma;    // dim x dim; empty -> identity
  std::string sigma_mode = "fixed";  // fixed | estimated
  std::string path;                  // gmm-file / missem-file
  std::uint64_t data_seed = 0;       // 0 -> derived from the experiment seed

  // missem-synthetic
  int rows = 0;
  int cols = 0;
  int truth_rank = 2;
  int servers = 0;
  double observed_fraction = 0.3;
  double noise_sd = 0.1;
};

struct QuantizerSection {
  std::string kind = "identity";  // identity | dithering | block-p
  int levels = 1;
  double r = 2.0;
  int p = 2;
  int block = 0;            // uniform block length (0 = use blocks)
  std::vector<int> blocks;  // explicit lengths

  /// Builds the spec for a statistic dimension; uniform block lengths get a
  /// shorter trailing block when they do not divide the dimension.
  QuantizerSpec build(int dim) const;
};

struct RunSection {
  std::string gamma_text = "1e-2";  // number | auto-theorem
  std::string alpha_text = "0.5";   // number | auto
  double participation = 1.0;
  int batch = 1;
  std::int64_t k_max = -1;  // -1 = derive from epochs
  double epochs = -1.0;
  int k_out = 1;
  int k_in = 0;
  std::string v_init = "mean-field";  // mean-field | zeros
  int diag_every = 1;
  int memory_gap_every = 10;
  int rank = 2;  // missem m-step rank
  bool theory_check = false;
};

struct ConstantsSection {
  double v_min = -1.0;
  double v_max = -1.0;
  double grad_lipschitz = -1.0;
  std::string field_lipschitz_text;  // number | estimate | empty
  double sigma2 = 0.0;
  int probes = 100;
  double probe_radius = 0.5;
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::FedEm;
  std::uint64_t seed = 0;
  bool workers_parallel = false;
  ModelSection model;
  QuantizerSection quantizer;
  RunSection run;
  ConstantsSection constants;
};

struct ParseResult {
  std::optional<ExperimentConfig> config;
  std::vector<std::string> errors;
  bool ok() const { return errors.empty() && config.has_value(); }
};

/// Strict parser for the flat key/value + [section] format (grammar in the
/// README): unknown keys are rejected by section.key path, and all
/// validation errors are collected rather than stopping at the first.
ParseResult parse_config(const std::string& text);
ParseResult parse_config_file(const std::string& path);

/// Renders a config in the same format; parse(render(c)) reproduces c.
std::string render_config(const ExperimentConfig& config);

struct ExperimentResult {
  std::vector<RoundTrace> trace;
  bool truncated = false;
  std::string error;                 // set when truncated
  double summary = 0.0;              // uniform-round mean-field summary
  double resolved_gamma = 0.0;
  double resolved_alpha = 0.0;
  std::int64_t resolved_k_max = 0;
  double variance_bound = 0.0;
  double missem_relative_error = -1.0;  // synthetic ground truth only
  std::string trace_path;
  std::string manifest_path;
};

/// Builds the model from the config, resolves auto hyperparameters, runs the
/// requested algorithm and writes trace + manifest (+ imputation outputs for
/// the missing-data model) under out_dir. Computational failures mid-run
/// flush the partial trace with a truncation marker and are reported in the
/// result instead of being rethrown.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::string& out_dir);

}  // namespace fedem
