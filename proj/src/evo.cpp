#include "widthsearch/evo.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "widthsearch/prior.hpp"

namespace widthsearch {

using nlohmann::json;

void EvoConfig::validate() const {
  if (population_size < 2) throw Error("population_size must be >= 2");
  if (survivors < 1 || survivors >= population_size) throw Error("survivors must lie in [1, population_size)");
  if (iterations < 1) throw Error("iterations must be >= 1");
  if (tournament_size < 1) throw Error("tournament_size must be >= 1");
  if (!(eta >= 0.0)) throw Error("eta must be non-negative");
}

json EvoConfig::to_json() const {
  return {{"population_size", population_size}, {"iterations", iterations}, {"survivors", survivors},
          {"tournament_size", tournament_size}, {"eta", eta}, {"mutation_prob", mutation_prob},
          {"seed", seed}};
}

EvoConfig EvoConfig::from_json(const json& j) {
  EvoConfig c;
  c.population_size = j.value("population_size", c.population_size);
  c.iterations = j.value("iterations", c.iterations);
  c.survivors = j.value("survivors", c.survivors);
  c.tournament_size = j.value("tournament_size", c.tournament_size);
  c.eta = j.value("eta", c.eta);
  c.mutation_prob = j.value("mutation_prob", c.mutation_prob);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::pair<WidthVector, WidthVector> two_point_crossover(const WidthVector& a, const WidthVector& b, std::size_t cut1,
                                                        std::size_t cut2, const SearchSpace& space) {
  if (!(cut1 < cut2 && cut2 <= space.num_genes())) throw Error("crossover cuts must satisfy 0 <= cut1 < cut2 <= G");
  auto ga = space.gene_indices(a);
  auto gb = space.gene_indices(b);
  for (std::size_t g = cut1; g < cut2; ++g) std::swap(ga[g], gb[g]);
  return {space.from_gene_indices(ga), space.from_gene_indices(gb)};
}

double polynomial_perturbation(double eta, double u) {
  const double power = 1.0 / (eta + 1.0);
  if (u < 0.5) return std::pow(2.0 * u, power) - 1.0;
  return 1.0 - std::pow(2.0 * (1.0 - u), power);
}

WidthVector polynomial_mutation(const WidthVector& c, const SearchSpace& space, double eta, double prob, Rng& rng) {
  auto idx = space.gene_indices(c);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t g = 0; g < idx.size(); ++g) {
    if (unit(rng) >= prob) continue;
    const int top = static_cast<int>(space.gene_grid_size(g)) - 1;
    if (top == 0) continue;
    const double moved = idx[g] + polynomial_perturbation(eta, unit(rng)) * top;
    idx[g] = std::clamp(static_cast<int>(std::lround(moved)), 0, top);
  }
  return space.from_gene_indices(idx);
}

WidthVector repair_to_budget(WidthVector c, const SearchSpace& space, const FlopsTable& table, int64_t budget) {
  auto idx = space.gene_indices(c);
  int64_t current = table.total(c);
  while (current > budget) {
    int best_gene = -1;
    int64_t best_flops = 0;
    for (std::size_t g = 0; g < idx.size(); ++g) {
      if (idx[g] == 0) continue;
      --idx[g];
      const int64_t f = table.total(space.from_gene_indices(idx));
      ++idx[g];
      if (best_gene < 0 || f > best_flops) {
        best_gene = static_cast<int>(g);
        best_flops = f;
      }
    }
    if (best_gene < 0) throw InfeasibleBudget(budget, current);
    --idx[static_cast<std::size_t>(best_gene)];
    current = best_flops;
  }
  return space.from_gene_indices(idx);
}

namespace {

// Memoizing, feasibility-enforcing front door to the evaluator. Every width a
// search scores goes through score().
class ScoreBoard {
 public:
  ScoreBoard(const Evaluator& eval, const FlopsTable& table, int64_t budget)
      : eval_(eval), table_(table), budget_(budget) {}

  std::vector<EvalReport> score(std::span<const WidthVector> widths) {
    std::vector<WidthVector> fresh;
    std::set<WidthVector> queued;
    for (const auto& c : widths) {
      const int64_t f = table_.total(c);
      if (f > budget_) {
        throw Error("search tried to evaluate " + c.str() + " with " + std::to_string(f) + " FLOPs over budget " +
                    std::to_string(budget_));
      }
      if (!cache_.contains(c) && queued.insert(c).second) fresh.push_back(c);
    }
    auto reports = evaluate_many(eval_, fresh);
    for (std::size_t i = 0; i < fresh.size(); ++i) cache_.emplace(fresh[i], std::move(reports[i]));
    std::vector<EvalReport> out;
    for (const auto& c : widths) out.push_back(cache_.at(c));
    return out;
  }

  std::size_t evaluations() const { return cache_.size(); }

 private:
  const Evaluator& eval_;
  const FlopsTable& table_;
  int64_t budget_;
  std::map<WidthVector, EvalReport> cache_;
};

IterationStats summarize(int iteration, std::span<const EvalReport> reports) {
  IterationStats s;
  s.iteration = iteration;
  const auto best = std::min_element(reports.begin(), reports.end(), ranks_before);
  s.best = best->width;
  s.best_fitness = best->acc_mean;
  double sum = 0.0;
  for (const auto& r : reports) sum += r.acc_mean;
  s.mean_fitness = sum / static_cast<double>(reports.size());
  return s;
}

}  // namespace

SearchResult evolve(const Evaluator& eval, const SearchSpace& space, const FlopsTable& table, int64_t budget,
                    const EvoConfig& cfg, std::vector<WidthVector> init) {
  cfg.validate();
  Rng rng = substream(cfg.seed, "evo");
  std::vector<WidthVector> pop;
  std::set<WidthVector> seen;
  for (auto& c : init) {
    space.validate(c);
    if (table.total(c) > budget) {
      log_warn("dropping initial width " + c.str() + " above the FLOPs budget");
      continue;
    }
    if (seen.insert(c).second) pop.push_back(std::move(c));
  }
  if (pop.empty()) throw Error("evolutionary search needs at least one feasible initial width");

  ScoreBoard board(eval, table, budget);
  SearchResult result;
  if (space.size() == 1) {
    result.best = board.score(pop).front();
    result.history.push_back(summarize(1, std::span<const EvalReport>(&result.best, 1)));
    result.evaluations = board.evaluations();
    return result;
  }

  const auto pop_size = static_cast<std::size_t>(cfg.population_size);
  if (pop.size() > pop_size) pop.resize(pop_size);
  if (pop.size() < pop_size) {
    for (auto& c : sample_feasible_uniform(space, table, budget, pop_size - pop.size(), rng, pop)) {
      pop.push_back(std::move(c));
    }
  }
  const double pm = cfg.mutation_prob >= 0.0 ? cfg.mutation_prob : 1.0 / static_cast<double>(space.num_genes());
  const std::size_t genes = space.num_genes();

  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto reports = board.score(pop);
    result.history.push_back(summarize(it, reports));
    if (it == cfg.iterations) {
      result.best = *std::min_element(reports.begin(), reports.end(), ranks_before);
      break;
    }

    std::vector<std::size_t> order(pop.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return ranks_before(reports[x], reports[y]); });
    // rank[i] = position of individual i in the sorted order (0 = best).
    std::vector<std::size_t> rank(pop.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;

    std::vector<WidthVector> survivors{pop[order.front()]};
    std::vector<std::size_t> pool(order.begin() + 1, order.end());
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(cfg.survivors), pop.size());
    while (survivors.size() < keep && !pool.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      std::size_t winner = pick(rng);
      for (int t = 1; t < cfg.tournament_size; ++t) {
        const std::size_t challenger = pick(rng);
        if (rank[pool[challenger]] < rank[pool[winner]]) winner = challenger;
      }
      survivors.push_back(pop[pool[winner]]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(winner));
    }

    std::vector<WidthVector> next = survivors;
    std::set<WidthVector> present(next.begin(), next.end());
    std::uniform_int_distribution<std::size_t> parent(0, survivors.size() - 1);
    std::uniform_int_distribution<std::size_t> cut(0, genes);
    std::size_t attempts = 0;
    const std::size_t max_attempts = 50 * pop_size;
    while (next.size() < pop_size) {
      const auto& a = survivors[parent(rng)];
      const auto& b = survivors[parent(rng)];
      std::size_t c1 = cut(rng);
      std::size_t c2 = cut(rng);
      while (c1 == c2) c2 = cut(rng);
      if (c1 > c2) std::swap(c1, c2);
      auto [x, y] = two_point_crossover(a, b, c1, c2, space);
      for (WidthVector* child : {&x, &y}) {
        if (next.size() >= pop_size) break;
        WidthVector m = repair_to_budget(polynomial_mutation(*child, space, cfg.eta, pm, rng), space, table, budget);
        ++attempts;
        if (present.insert(m).second || attempts > max_attempts) next.push_back(std::move(m));
      }
    }
    pop = std::move(next);
  }
  result.evaluations = board.evaluations();
  return result;
}

SearchResult greedy_slim(const Evaluator& eval, const SearchSpace& space, const FlopsTable& table, int64_t budget) {
  const int64_t minimum = table.total(space.min_widths());
  if (budget < minimum) throw InfeasibleBudget(budget, minimum);
  SearchResult result;
  auto idx = space.gene_indices(space.max_widths());
  EvalReport current = eval(space.from_gene_indices(idx));
  std::size_t evaluations = 1;
  int step = 0;
  result.history.push_back({step, current.acc_mean, current.acc_mean, current.width});
  while (current.flops > budget) {
    std::vector<WidthVector> candidates;
    for (std::size_t g = 0; g < idx.size(); ++g) {
      if (idx[g] == 0) continue;
      --idx[g];
      candidates.push_back(space.from_gene_indices(idx));
      ++idx[g];
    }
    const auto reports = evaluate_many(eval, candidates);
    evaluations += reports.size();
    const auto best = std::min_element(reports.begin(), reports.end(), ranks_before);
    current = *best;
    idx = space.gene_indices(current.width);
    double mean = 0.0;
    for (const auto& r : reports) mean += r.acc_mean;
    result.history.push_back({++step, current.acc_mean, mean / static_cast<double>(reports.size()), current.width});
  }
  result.best = current;
  result.evaluations = evaluations;
  return result;
}

std::vector<WidthVector> random_search(const SearchSpace& space, const FlopsTable& table, int64_t budget,
                                       std::size_t n, Rng& rng) {
  const int64_t minimum = table.total(space.min_widths());
  if (budget < minimum) throw InfeasibleBudget(budget, minimum);
  auto out = sample_feasible_uniform(space, table, budget, n, rng);
  if (out.size() < n) {
    log_warn("random search found only " + std::to_string(out.size()) + " distinct feasible widths");
  }
  return out;
}

WidthVector uniform_baseline(const SearchSpace& space, const FlopsTable& table, int64_t budget) {
  const int64_t minimum = table.total(space.min_widths());
  if (budget < minimum) throw InfeasibleBudget(budget, minimum);
  std::set<double, std::greater<>> fractions{0.0, 1.0};
  for (std::size_t g = 0; g < space.num_genes(); ++g) {
    const auto top = space.gene_grid_size(g) - 1;
    for (std::size_t i = 0; i <= top && top > 0; ++i) fractions.insert(static_cast<double>(i) / static_cast<double>(top));
  }
  for (double f : fractions) {
    std::vector<int> idx(space.num_genes());
    for (std::size_t g = 0; g < idx.size(); ++g) {
      const auto top = static_cast<double>(space.gene_grid_size(g) - 1);
      idx[g] = static_cast<int>(std::floor(f * top + 1e-9));
    }
    WidthVector c = space.from_gene_indices(idx);
    if (table.total(c) <= budget) return c;
  }
  return space.min_widths();
}

}  // namespace widthsearch
