#include "widthsearch/prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace widthsearch {

using nlohmann::json;

json PotentialErrorTable::to_json() const {
  return {{"error", error}, {"visits", visits}, {"imputed", imputed}, {"records_used", records_used}};
}

PotentialErrorTable build_error_table(const LossLog& log, const SearchSpace& space, std::size_t m) {
  if (m == 0) throw Error("m must be positive");
  if (log.size() == 0) throw Error("the loss log is empty");
  if (m > log.size()) {
    log_warn("requested top " + std::to_string(m) + " widths but the loss log holds " + std::to_string(log.size()) +
             "; using all of them");
  }
  const auto top = log.top(m);
  return build_error_table(top, space);
}

PotentialErrorTable build_error_table(std::span<const LossRecord> top, const SearchSpace& space) {
  if (top.empty()) throw Error("no loss records to build the potential-error table from");
  PotentialErrorTable t;
  std::vector<std::vector<double>> sums;
  for (std::size_t l = 0; l < space.num_layers(); ++l) {
    sums.emplace_back(space.grid(l).size(), 0.0);
    t.visits.emplace_back(space.grid(l).size(), 0);
  }
  for (const auto& r : top) {
    space.validate(r.width);
    for (std::size_t l = 0; l < space.num_layers(); ++l) {
      const auto i = static_cast<std::size_t>(space.grid_index(l, r.width[l]));
      sums[l][i] += r.loss;
      ++t.visits[l][i];
    }
  }
  t.records_used = top.size();

  double max_seen = -std::numeric_limits<double>::infinity();
  t.error = sums;
  for (std::size_t l = 0; l < sums.size(); ++l) {
    for (std::size_t i = 0; i < sums[l].size(); ++i) {
      if (t.visits[l][i] == 0) continue;
      t.error[l][i] = sums[l][i] / t.visits[l][i];
      max_seen = std::max(max_seen, t.error[l][i]);
    }
  }
  double mean = 0.0;
  for (const auto& r : top) mean += r.loss;
  mean /= static_cast<double>(top.size());
  double var = 0.0;
  for (const auto& r : top) var += (r.loss - mean) * (r.loss - mean);
  const double sd = top.size() > 1 ? std::sqrt(var / static_cast<double>(top.size() - 1)) : 0.0;
  t.imputed = max_seen + sd;
  for (std::size_t l = 0; l < sums.size(); ++l) {
    for (std::size_t i = 0; i < sums[l].size(); ++i) {
      if (t.visits[l][i] == 0) t.error[l][i] = t.imputed;
    }
  }
  return t;
}

json SamplingDistribution::to_json(const SearchSpace& space) const {
  json layers = json::array();
  for (std::size_t l = 0; l < probs.size(); ++l) {
    layers.push_back({{"layer", l}, {"widths", space.grid(l)}, {"probs", probs[l]}});
  }
  return {{"layers", layers}};
}

SamplingDistribution SamplingDistribution::from_json(const json& j) {
  SamplingDistribution p;
  for (const auto& e : j.at("layers")) p.probs.push_back(e.at("probs").get<std::vector<double>>());
  return p;
}

SamplingDistribution uniform_distribution(const SearchSpace& space) {
  SamplingDistribution p;
  for (std::size_t l = 0; l < space.num_layers(); ++l) {
    const auto k = space.grid(l).size();
    p.probs.emplace_back(k, 1.0 / static_cast<double>(k));
  }
  return p;
}

double expected_flops(const SamplingDistribution& p, const SearchSpace& space, const FlopsTable& table) {
  const std::size_t L = space.num_layers();
  if (p.probs.size() != L) throw Error("distribution depth does not match the space");
  double total = 0.0;
  for (std::size_t k = 0; k <= L; ++k) {
    const auto& in = table.in_widths(k);
    const auto& out = table.out_widths(k);
    const bool tied = k > 0 && k < L && space.gene_of(k - 1) == space.gene_of(k);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double pi = k == 0 ? 1.0 : p.probs[k - 1][i];
      if (pi == 0.0) continue;
      if (tied) {
        total += pi * static_cast<double>(table.at_index(k, i, i));
        continue;
      }
      for (std::size_t j = 0; j < out.size(); ++j) {
        const double pj = k == L ? 1.0 : p.probs[k][j];
        total += pi * static_cast<double>(table.at_index(k, i, j)) * pj;
      }
    }
  }
  return total;
}

double expected_error(const SamplingDistribution& p, const PotentialErrorTable& e) {
  double total = 0.0;
  for (std::size_t l = 0; l < p.probs.size(); ++l) {
    for (std::size_t i = 0; i < p.probs[l].size(); ++i) total += p.probs[l][i] * e.error[l][i];
  }
  return total;
}

InfeasibleBudget::InfeasibleBudget(int64_t b, int64_t min)
    : Error("FLOPs budget " + std::to_string(b) + " is below the minimum attainable " + std::to_string(min)),
      budget(b),
      minimum(min) {}

json SolverConfig::to_json() const {
  return {{"restarts", restarts}, {"iterations", iterations}, {"step", step},
          {"initial_penalty", initial_penalty}, {"penalty_interval", penalty_interval}, {"seed", seed}};
}

SolverConfig SolverConfig::from_json(const json& j) {
  SolverConfig c;
  c.restarts = j.value("restarts", c.restarts);
  c.iterations = j.value("iterations", c.iterations);
  c.step = j.value("step", c.step);
  c.initial_penalty = j.value("initial_penalty", c.initial_penalty);
  c.penalty_interval = j.value("penalty_interval", c.penalty_interval);
  c.seed = j.value("seed", c.seed);
  return c;
}

void project_to_simplex(std::span<double> v) {
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cumsum += u[i];
    const double t = (cumsum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  for (double& x : v) x = std::max(x - theta, 0.0);
}

namespace {

// Gene-level view of the problem, FLOPs normalized by the budget.
struct Problem {
  struct Term {
    int in_gene = -1;   // -1: fixed input dimension
    int out_gene = -1;  // -1: fixed output dimension
    bool diagonal = false;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> f;
  };

  std::vector<std::size_t> sizes;
  std::vector<std::vector<double>> coef;  // shifted and scaled errors
  std::vector<std::vector<double>> raw;   // summed errors per gene
  std::vector<Term> terms;

  double linear(const std::vector<std::vector<double>>& p, const std::vector<std::vector<double>>& c) const {
    double s = 0.0;
    for (std::size_t g = 0; g < p.size(); ++g) {
      for (std::size_t i = 0; i < p[g].size(); ++i) s += c[g][i] * p[g][i];
    }
    return s;
  }

  double flops(const std::vector<std::vector<double>>& p) const {
    double s = 0.0;
    for (const auto& t : terms) {
      for (std::size_t i = 0; i < t.rows; ++i) {
        const double pi = t.in_gene < 0 ? 1.0 : p[static_cast<std::size_t>(t.in_gene)][i];
        if (t.diagonal) {
          s += pi * t.f[i * t.cols + i];
          continue;
        }
        for (std::size_t j = 0; j < t.cols; ++j) {
          const double pj = t.out_gene < 0 ? 1.0 : p[static_cast<std::size_t>(t.out_gene)][j];
          s += pi * t.f[i * t.cols + j] * pj;
        }
      }
    }
    return s;
  }

  void flops_grad(const std::vector<std::vector<double>>& p, double weight,
                  std::vector<std::vector<double>>& grad) const {
    for (const auto& t : terms) {
      for (std::size_t i = 0; i < t.rows; ++i) {
        const double pi = t.in_gene < 0 ? 1.0 : p[static_cast<std::size_t>(t.in_gene)][i];
        if (t.diagonal) {
          grad[static_cast<std::size_t>(t.in_gene)][i] += weight * t.f[i * t.cols + i];
          continue;
        }
        for (std::size_t j = 0; j < t.cols; ++j) {
          const double fij = t.f[i * t.cols + j];
          if (t.in_gene >= 0) {
            const double pj = t.out_gene < 0 ? 1.0 : p[static_cast<std::size_t>(t.out_gene)][j];
            grad[static_cast<std::size_t>(t.in_gene)][i] += weight * fij * pj;
          }
          if (t.out_gene >= 0) grad[static_cast<std::size_t>(t.out_gene)][j] += weight * pi * fij;
        }
      }
    }
  }
};

Problem make_problem(const PotentialErrorTable& e, const SearchSpace& space, const FlopsTable& table,
                     int64_t budget) {
  Problem pr;
  const std::size_t G = space.num_genes();
  const std::size_t L = space.num_layers();
  for (std::size_t g = 0; g < G; ++g) {
    pr.sizes.push_back(space.gene_grid_size(g));
    pr.raw.emplace_back(pr.sizes.back(), 0.0);
  }
  for (std::size_t l = 0; l < L; ++l) {
    if (e.error.size() != L || e.error[l].size() != space.grid(l).size()) {
      throw Error("potential-error table does not match the space");
    }
    auto& r = pr.raw[space.gene_of(l)];
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += e.error[l][i];
  }
  double scale = 0.0;
  pr.coef = pr.raw;
  for (auto& c : pr.coef) {
    const double lo = *std::min_element(c.begin(), c.end());
    for (double& v : c) v -= lo;
    scale = std::max(scale, *std::max_element(c.begin(), c.end()));
  }
  if (scale > 0.0) {
    for (auto& c : pr.coef) {
      for (double& v : c) v /= scale;
    }
  }
  if (table.num_layers() != L + 1) throw Error("FLOPs table depth does not match the space");
  for (std::size_t k = 0; k <= L; ++k) {
    Problem::Term t;
    t.in_gene = k == 0 ? -1 : static_cast<int>(space.gene_of(k - 1));
    t.out_gene = k == L ? -1 : static_cast<int>(space.gene_of(k));
    t.diagonal = t.in_gene >= 0 && t.in_gene == t.out_gene;
    t.rows = table.in_widths(k).size();
    t.cols = table.out_widths(k).size();
    for (std::size_t i = 0; i < t.rows; ++i) {
      for (std::size_t j = 0; j < t.cols; ++j) {
        t.f.push_back(static_cast<double>(table.at_index(k, i, j)) / static_cast<double>(budget));
      }
    }
    pr.terms.push_back(std::move(t));
  }
  return pr;
}

using GeneProbs = std::vector<std::vector<double>>;

// Augmented Lagrangian of the budget constraint flops(p) <= 1.
double penalized(const Problem& pr, const GeneProbs& p, double mu, double lambda) {
  const double s = std::max(0.0, lambda + mu * (pr.flops(p) - 1.0));
  return pr.linear(p, pr.coef) + (s * s - lambda * lambda) / (2.0 * mu);
}

// Smallest shift toward the all-minimum point that satisfies the budget.
GeneProbs repair(const Problem& pr, const GeneProbs& p) {
  if (pr.flops(p) <= 1.0) return p;
  auto mix = [&](double t) {
    GeneProbs q = p;
    for (auto& g : q) {
      for (double& v : g) v *= (1.0 - t);
      g.front() += t;
    }
    return q;
  };
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (pr.flops(mix(mid)) <= 1.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return mix(hi);
}

GeneProbs run_restart(const Problem& pr, GeneProbs p, const SolverConfig& cfg) {
  double mu = cfg.initial_penalty;
  double lambda = 0.0;
  double last_violation = std::numeric_limits<double>::infinity();
  GeneProbs grad = p;
  GeneProbs trial = p;
  for (int it = 1; it <= cfg.iterations; ++it) {
    const double weight = std::max(0.0, lambda + mu * (pr.flops(p) - 1.0));
    grad = pr.coef;
    if (weight > 0.0) pr.flops_grad(p, weight, grad);
    const double f0 = penalized(pr, p, mu, lambda);

    double step = cfg.step;
    for (int bt = 0; bt < 60; ++bt) {
      double lin = 0.0;
      double sq = 0.0;
      for (std::size_t g = 0; g < p.size(); ++g) {
        for (std::size_t i = 0; i < p[g].size(); ++i) trial[g][i] = p[g][i] - step * grad[g][i];
        project_to_simplex(trial[g]);
        for (std::size_t i = 0; i < p[g].size(); ++i) {
          const double d = trial[g][i] - p[g][i];
          lin += grad[g][i] * d;
          sq += d * d;
        }
      }
      if (penalized(pr, trial, mu, lambda) <= f0 + lin + sq / (2.0 * step)) break;
      step *= 0.5;
    }
    std::swap(p, trial);
    if (cfg.penalty_interval > 0 && it % cfg.penalty_interval == 0) {
      const double g = pr.flops(p) - 1.0;
      const double violation = std::max(0.0, g);
      lambda = std::max(0.0, lambda + mu * g);
      if (violation > 1e-12 && violation > 0.25 * last_violation) mu *= 2.0;
      last_violation = violation;
    }
  }
  return repair(pr, p);
}

}  // namespace

SolveResult solve_distribution(const PotentialErrorTable& e, const SearchSpace& space, const FlopsTable& table,
                               int64_t budget, const SolverConfig& cfg) {
  if (cfg.restarts < 1 || cfg.iterations < 0 || !(cfg.step > 0.0)) throw Error("invalid solver configuration");
  const int64_t minimum = table.total(space.min_widths());
  if (budget < minimum || budget <= 0) throw InfeasibleBudget(budget, minimum);
  const Problem pr = make_problem(e, space, table, budget);

  std::vector<GeneProbs> starts(static_cast<std::size_t>(cfg.restarts));
  for (int r = 0; r < cfg.restarts; ++r) {
    GeneProbs p;
    Rng rng = substream(cfg.seed, "prior/restart/" + std::to_string(r));
    std::gamma_distribution<double> gamma(1.0, 1.0);
    for (std::size_t k : pr.sizes) {
      std::vector<double> g(k, 1.0 / static_cast<double>(k));
      if (r > 0) {
        double s = 0.0;
        for (double& v : g) s += (v = gamma(rng));
        for (double& v : g) v /= s;
      }
      p.push_back(std::move(g));
    }
    starts[static_cast<std::size_t>(r)] = std::move(p);
  }

  std::vector<GeneProbs> finals(starts.size());
  parallel_for(starts.size(), [&](std::size_t r) { finals[r] = run_restart(pr, starts[r], cfg); });

  std::size_t best = 0;
  double best_obj = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < finals.size(); ++r) {
    const double obj = pr.linear(finals[r], pr.raw);
    // Restarts that tie up to rounding keep the lower index.
    if (obj < best_obj - 1e-12 * std::max(1.0, std::abs(best_obj))) {
      best_obj = obj;
      best = r;
    }
  }

  SolveResult res;
  res.best_restart = static_cast<int>(best);
  for (std::size_t l = 0; l < space.num_layers(); ++l) res.dist.probs.push_back(finals[best][space.gene_of(l)]);
  res.objective = expected_error(res.dist, e);
  res.expected_flops = expected_flops(res.dist, space, table);
  return res;
}

std::optional<WidthVector> draw_feasible(const SamplingDistribution& p, const SearchSpace& space,
                                         const FlopsTable& table, int64_t budget, Rng& rng, int64_t max_draws,
                                         int64_t* draws_used) {
  std::vector<std::discrete_distribution<int>> pick;
  for (std::size_t g = 0; g < space.num_genes(); ++g) {
    const auto& probs = p.probs.at(space.gene_layers(g).front());
    pick.emplace_back(probs.begin(), probs.end());
  }
  std::vector<int> idx(space.num_genes());
  for (int64_t d = 1; d <= max_draws; ++d) {
    for (std::size_t g = 0; g < idx.size(); ++g) idx[g] = pick[g](rng);
    WidthVector c = space.from_gene_indices(idx);
    if (table.total(c) <= budget) {
      if (draws_used) *draws_used = d;
      return c;
    }
  }
  if (draws_used) *draws_used = max_draws;
  return std::nullopt;
}

namespace {

constexpr int64_t kMaxDraws = 1'000'000;
constexpr int64_t kStallDraws = 10'000;
constexpr double kMinAcceptance = 1e-3;

// A run of draws without a new width ends sampling, unless acceptance is so
// low that the full draw cap must be spent before giving up.
bool stalled(int64_t since_new, int64_t accepted, int64_t draws) {
  return since_new >= kStallDraws && static_cast<double>(accepted) >= kMinAcceptance * static_cast<double>(draws);
}

}  // namespace

std::vector<WidthVector> sample_feasible_uniform(const SearchSpace& space, const FlopsTable& table, int64_t budget,
                                                 std::size_t n, Rng& rng, std::span<const WidthVector> exclude) {
  std::set<WidthVector> seen(exclude.begin(), exclude.end());
  std::vector<WidthVector> out;
  int64_t draws = 0;
  int64_t accepted = 0;
  int64_t since_new = 0;
  while (out.size() < n && draws < kMaxDraws && !stalled(since_new, accepted, draws)) {
    ++draws;
    ++since_new;
    WidthVector c = sample_uniform(space, rng);
    if (table.total(c) > budget) continue;
    ++accepted;
    if (seen.insert(c).second) {
      out.push_back(std::move(c));
      since_new = 0;
    }
  }
  if (draws >= kMaxDraws && static_cast<double>(accepted) < kMinAcceptance * static_cast<double>(draws)) {
    throw Error("uniform sampling accepted " + std::to_string(accepted) + " of " + std::to_string(draws) +
                " draws under budget " + std::to_string(budget));
  }
  return out;
}

std::vector<WidthVector> sample_population(const SamplingDistribution& p, const SearchSpace& space,
                                           const FlopsTable& table, int64_t budget, std::size_t size, Rng& rng) {
  if (p.probs.size() != space.num_layers()) throw Error("distribution depth does not match the space");
  std::vector<std::discrete_distribution<int>> pick;
  for (std::size_t g = 0; g < space.num_genes(); ++g) {
    const auto& probs = p.probs[space.gene_layers(g).front()];
    if (probs.size() != space.gene_grid_size(g)) throw Error("distribution does not match the layer grid");
    pick.emplace_back(probs.begin(), probs.end());
  }
  std::set<WidthVector> seen;
  std::vector<WidthVector> out;
  std::vector<int> idx(space.num_genes());
  int64_t draws = 0;
  int64_t accepted = 0;
  int64_t since_new = 0;
  while (out.size() < size && draws < kMaxDraws && !stalled(since_new, accepted, draws)) {
    ++draws;
    ++since_new;
    for (std::size_t g = 0; g < idx.size(); ++g) idx[g] = pick[g](rng);
    WidthVector c = space.from_gene_indices(idx);
    if (table.total(c) > budget) continue;
    ++accepted;
    if (seen.insert(c).second) {
      out.push_back(std::move(c));
      since_new = 0;
    }
  }
  if (draws >= kMaxDraws && static_cast<double>(accepted) < kMinAcceptance * static_cast<double>(draws)) {
    throw Error("prior sampling accepted " + std::to_string(accepted) + " of " + std::to_string(draws) +
                " draws; the distribution and the budget " + std::to_string(budget) + " disagree");
  }
  if (out.size() < size) {
    auto pad = sample_feasible_uniform(space, table, budget, size - out.size(), rng, out);
    for (auto& c : pad) out.push_back(std::move(c));
  }
  return out;
}

}  // namespace widthsearch
