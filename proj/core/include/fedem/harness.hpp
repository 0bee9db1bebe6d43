#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedem/fedem.hpp"
#include "fedem/model.hpp"
#include "fedem/quantizer.hpp"
#include "fedem/trace.hpp"

namespace fedem {

/// One round of the memory-less comparator: the local statistic minus the
/// estimate is compressed directly. Exists solely as the heterogeneity
/// baseline; matches fedem_round in every other respect (same streams, so
/// draws are pinned across the two algorithms for a given seed and round).
RoundOutput naive_baseline_round(const Model& model,
                                 const QuantizerSpec& quantizer,
                                 const FedEmConfig& config,
                                 ServerState& server);

FedEmRun run_naive_baseline(const Model& model, const QuantizerSpec& quantizer,
                            const FedEmConfig& config,
                            const Statistic* initial = nullptr,
                            std::vector<RoundTrace>* sink = nullptr);

/// Exact EM in the expectation space; the reference trajectory.
FedEmRun run_exact_em(const Model& model, std::int64_t rounds,
                      std::uint64_t seed, const Statistic* initial = nullptr,
                      int diag_every = 1,
                      std::vector<RoundTrace>* sink = nullptr);

/// Empirical smoothness probe: secant ratios ||h(s) - h(s')|| / ||s - s'||
/// over random pairs around the base point. An estimate (a lower bound
/// witness), never a certificate.
struct ConstantsEstimate {
  double field_lipschitz = 0.0;  // max observed secant ratio
  double median_ratio = 0.0;
  double max_ratio = 0.0;
  int probes = 0;
};
ConstantsEstimate estimate_constants(const Model& model, const Statistic& base,
                                     int probes, double radius,
                                     std::uint64_t seed);

/// Mean of the exact mean-field column over the recorded rounds starting at
/// `burn_in`: the Monte-Carlo analog of the uniform-random-round
/// stationarity summary. Rows without the diagnostic are skipped.
double uniform_k_summary(const std::vector<RoundTrace>& trace,
                         std::int64_t burn_in = 0);

/// Statistical contract check of one quantizer on random vectors:
/// unbiasedness (3 standard errors per coordinate), second-moment bound
/// (1 + omega) ||x||^2 plus a 3 sigma band, and for block quantizers the
/// exact mean-squared-error formula within Monte-Carlo error.
struct QuantizerContractResult {
  std::string name;
  int vectors = 0;
  bool mean_ok = true;
  bool second_moment_ok = true;
  bool mse_formula_ok = true;  // block quantizers only
  double worst_mean_sigmas = 0.0;
  double worst_second_moment_margin = 0.0;  // most positive violation
  bool passed() const { return mean_ok && second_moment_ok && mse_formula_ok; }
};

QuantizerContractResult check_quantizer_contract(const QuantizerSpec& spec,
                                                 const std::string& name,
                                                 int dim, int vectors,
                                                 int trials,
                                                 std::uint64_t seed);

/// The default battery used by the acceptance suite and the quant-test
/// subcommand: identity, dithering and block quantizers over dimensions up
/// to 64.
std::vector<QuantizerContractResult> quantizer_contract_suite(
    int vectors, int trials, std::uint64_t seed);

}  // namespace fedem
