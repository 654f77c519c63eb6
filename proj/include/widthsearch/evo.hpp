#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "widthsearch/eval.hpp"
#include "widthsearch/space.hpp"

namespace widthsearch {

struct EvoConfig {
  int population_size = 40;
  int iterations = 50;
  int survivors = 10;
  int tournament_size = 2;
  double eta = 20.0;
  double mutation_prob = -1.0;  // negative: 1 / number of genes
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static EvoConfig from_json(const nlohmann::json& j);
};

struct IterationStats {
  int iteration = 0;
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
  WidthVector best;
};

struct SearchResult {
  EvalReport best;
  std::vector<IterationStats> history;
  std::size_t evaluations = 0;
};

// Swaps genes [cut1, cut2) between the parents; tied layers move together.
std::pair<WidthVector, WidthVector> two_point_crossover(const WidthVector& a, const WidthVector& b, std::size_t cut1,
                                                        std::size_t cut2, const SearchSpace& space);

// Deb's polynomial perturbation in [-1, 1] for a uniform draw u in [0, 1).
double polynomial_perturbation(double eta, double u);

// Each gene mutates with probability `prob`: its grid index moves by
// perturbation * (K' - 1), rounded to the nearest index and clamped.
WidthVector polynomial_mutation(const WidthVector& c, const SearchSpace& space, double eta, double prob, Rng& rng);

// Steps down, one grid step at a time, the gene whose reduction sheds the
// fewest FLOPs until the width fits the budget.
WidthVector repair_to_budget(WidthVector c, const SearchSpace& space, const FlopsTable& table, int64_t budget);

// Single-objective evolutionary search under a hard FLOPs budget: binary
// tournaments pick the survivors (the best individual always survives),
// two-point crossover and polynomial mutation refill the population.
SearchResult evolve(const Evaluator& eval, const SearchSpace& space, const FlopsTable& table, int64_t budget,
                    const EvoConfig& cfg, std::vector<WidthVector> init);

// Starts from the widest network and repeatedly applies the one-gene,
// one-grid-step reduction that keeps acc_mean highest, until it fits.
SearchResult greedy_slim(const Evaluator& eval, const SearchSpace& space, const FlopsTable& table, int64_t budget);

// n distinct feasible widths drawn uniformly.
std::vector<WidthVector> random_search(const SearchSpace& space, const FlopsTable& table, int64_t budget,
                                       std::size_t n, Rng& rng);

// Every layer scaled by the same fraction of its grid; the widest such
// width that fits the budget.
WidthVector uniform_baseline(const SearchSpace& space, const FlopsTable& table, int64_t budget);

}  // namespace widthsearch
