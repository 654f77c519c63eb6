#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "widthsearch/space.hpp"
#include "widthsearch/supertrain.hpp"

namespace widthsearch {

/// Mean training loss of the top-m recorded widths that used grid width i at
/// layer l. Cells no top-m width visited carry an imputed pessimistic value.
struct PotentialErrorTable {
  std::vector<std::vector<double>> error;  // [layer][grid index]
  std::vector<std::vector<int>> visits;
  double imputed = 0.0;  // value written into unvisited cells
  std::size_t records_used = 0;

  bool observed(std::size_t layer, std::size_t i) const { return visits[layer][i] > 0; }
  nlohmann::json to_json() const;
};

PotentialErrorTable build_error_table(const LossLog& log, const SearchSpace& space, std::size_t m = 100);
PotentialErrorTable build_error_table(std::span<const LossRecord> top, const SearchSpace& space);

struct SamplingDistribution {
  std::vector<std::vector<double>> probs;  // [layer][grid index]; tied layers share values

  nlohmann::json to_json(const SearchSpace& space) const;
  static SamplingDistribution from_json(const nlohmann::json& j);
};

SamplingDistribution uniform_distribution(const SearchSpace& space);

// Sum over the dense chain of P_in * F * P_out, with point masses at the
// fixed input and output dimensions.
double expected_flops(const SamplingDistribution& p, const SearchSpace& space, const FlopsTable& table);
double expected_error(const SamplingDistribution& p, const PotentialErrorTable& e);

class InfeasibleBudget : public Error {
 public:
  InfeasibleBudget(int64_t budget, int64_t minimum);
  int64_t budget;
  int64_t minimum;
};

struct SolverConfig {
  int restarts = 10;
  int iterations = 2000;
  double step = 0.05;
  double initial_penalty = 100.0;
  int penalty_interval = 100;  // iterations between violation checks
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SolverConfig from_json(const nlohmann::json& j);
};

struct SolveResult {
  SamplingDistribution dist;
  double objective = 0.0;
  double expected_flops = 0.0;
  int best_restart = 0;
};

/// Minimizes the expected potential error over per-layer simplices subject to
/// expected FLOPs <= budget. Projected gradient on an augmented Lagrangian,
/// several restarts, and a final shift toward the smallest widths that makes
/// the constraint hold exactly.
SolveResult solve_distribution(const PotentialErrorTable& e, const SearchSpace& space, const FlopsTable& table,
                               int64_t budget, const SolverConfig& cfg = {});

// Euclidean projection onto the probability simplex.
void project_to_simplex(std::span<double> v);

// One draw from p conditioned on FLOPs <= budget (rejection). Returns
// nullopt when max_draws draws were all rejected.
std::optional<WidthVector> draw_feasible(const SamplingDistribution& p, const SearchSpace& space,
                                         const FlopsTable& table, int64_t budget, Rng& rng,
                                         int64_t max_draws = 1'000'000, int64_t* draws_used = nullptr);

// `size` distinct feasible widths drawn from p, padded with distinct
// uniform feasible widths when p alone cannot supply enough.
std::vector<WidthVector> sample_population(const SamplingDistribution& p, const SearchSpace& space,
                                           const FlopsTable& table, int64_t budget, std::size_t size, Rng& rng);

// Distinct feasible widths by uniform rejection sampling.
std::vector<WidthVector> sample_feasible_uniform(const SearchSpace& space, const FlopsTable& table, int64_t budget,
                                                 std::size_t n, Rng& rng,
                                                 std::span<const WidthVector> exclude = {});

}  // namespace widthsearch
