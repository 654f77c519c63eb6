#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "widthsearch/data.hpp"
#include "widthsearch/eval.hpp"
#include "widthsearch/supertrain.hpp"

namespace widthsearch {

struct BenchRecord {
  WidthVector width;
  double acc_mean = 0.0;
  double acc_std = 0.0;
  int64_t flops = 0;
  int64_t params = 0;
};

/// Exhaustive ground truth over a small space. On disk: JSON Lines, a header
/// object first, then one record per width.
struct BenchmarkTable {
  nlohmann::json metadata;
  std::vector<BenchRecord> records;

  SearchSpace space() const;
  // Exactly one record per width of the declared space, std >= 0, FLOPs and
  // params consistent with the space.
  void validate() const;

  void write_jsonl(const std::filesystem::path& file) const;
  static BenchmarkTable read_jsonl(const std::filesystem::path& file);
  void write_csv(const std::filesystem::path& file) const;
};

constexpr uint64_t kBenchmarkGenerationLimit = 4096;

// Retrains every width of the space `seeds` times from scratch.
BenchmarkTable generate_benchmark(const SearchSpace& space, const TrainConfig& train, const DatasetConfig& data,
                                  int seeds = 3, const std::string& family = "mlp");

struct CorrelationReport {
  double pearson = 0.0;
  double spearman = 0.0;
  double kendall_tau = 0.0;

  nlohmann::json to_json() const;
};

// 1-based ranks, ties get the average of the ranks they span.
std::vector<double> average_ranks(std::span<const double> v);
double pearson(std::span<const double> x, std::span<const double> y);
// Tau-b with tie correction, O(n log n).
double kendall_tau_b(std::span<const double> x, std::span<const double> y);

CorrelationReport correlate(std::span<const double> predicted, std::span<const double> truth);

// Scores every table width with `eval` and correlates acc_mean against the table.
CorrelationReport score_evaluator(const Evaluator& eval, const BenchmarkTable& table);
CorrelationReport score_supernet(const Supernet& sn, const BenchmarkTable& table, const Batch& val,
                                 const FlopsTable& flops);

// FLOPs and params against accuracy.
CorrelationReport flops_correlation(const BenchmarkTable& table);
CorrelationReport params_correlation(const BenchmarkTable& table);

/// Analytic stand-in for retrained accuracy, for exercising searches without
/// training: concave in a layer-weighted total log-width, plus a small
/// deterministic per-width noise term. Harness use only.
class SyntheticOracle {
 public:
  SyntheticOracle(const SearchSpace& space, uint64_t seed, double noise = 0.003);

  double fitness(const WidthVector& c) const;
  EvalReport report(const WidthVector& c, const FlopsTable& table) const;
  // References this oracle and the table.
  Evaluator evaluator(const FlopsTable& table) const;

 private:
  SearchSpace space_;
  uint64_t seed_;
  double noise_;
  std::vector<double> weights_;
};

BenchmarkTable synthetic_benchmark(const SearchSpace& space, const SyntheticOracle& oracle, const FlopsTable& table);

// Loss history a supernet might have produced: uniform widths with loss
// 1 - fitness plus Gaussian noise.
LossLog synthetic_loss_log(const SearchSpace& space, const SyntheticOracle& oracle, std::size_t n, double noise,
                           Rng& rng);

}  // namespace widthsearch
