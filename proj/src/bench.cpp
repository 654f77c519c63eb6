#include "widthsearch/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

namespace widthsearch {

using nlohmann::json;

SearchSpace BenchmarkTable::space() const { return SearchSpace::from_json(metadata.at("space")); }

void BenchmarkTable::validate() const {
  const SearchSpace sp = space();
  const FlopsTable ft = FlopsTable::dense(sp);
  if (records.size() != sp.size()) {
    throw Error("benchmark has " + std::to_string(records.size()) + " records, its space has " +
                std::to_string(sp.size()) + " widths");
  }
  std::map<WidthVector, int> seen;
  for (const auto& r : records) {
    sp.validate(r.width);
    if (++seen[r.width] > 1) throw Error("benchmark lists " + r.width.str() + " twice");
    if (!(r.acc_std >= 0.0)) throw Error("negative acc_std for " + r.width.str());
    if (r.flops != ft.total(r.width)) throw Error("FLOPs of " + r.width.str() + " disagree with the space");
    if (r.params != param_count(r.width, sp)) throw Error("params of " + r.width.str() + " disagree with the space");
  }
}

void BenchmarkTable::write_jsonl(const std::filesystem::path& file) const {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw Error("cannot write " + file.string());
  json h = metadata;
  h["type"] = "header";
  os << h.dump() << '\n';
  for (const auto& r : records) {
    os << json{{"widths", r.width.widths}, {"acc_mean", r.acc_mean}, {"acc_std", r.acc_std}, {"flops", r.flops},
               {"params", r.params}}
              .dump()
       << '\n';
  }
}

BenchmarkTable BenchmarkTable::read_jsonl(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw Error("cannot open " + file.string());
  BenchmarkTable t;
  std::string line;
  if (!std::getline(is, line)) throw Error(file.string() + " is empty");
  t.metadata = json::parse(line);
  if (t.metadata.value("type", "") != "header") throw Error(file.string() + ": first line must be the header object");
  t.metadata.erase("type");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json r = json::parse(line);
    t.records.push_back({width_from_json(r.at("widths")), r.at("acc_mean").get<double>(), r.at("acc_std").get<double>(),
                         r.at("flops").get<int64_t>(), r.at("params").get<int64_t>()});
  }
  return t;
}

void BenchmarkTable::write_csv(const std::filesystem::path& file) const {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw Error("cannot write " + file.string());
  os << "widths,acc_mean,acc_std,flops,params\n";
  for (const auto& r : records) {
    std::string w;
    for (std::size_t i = 0; i < r.width.size(); ++i) w += (i ? "-" : "") + std::to_string(r.width[i]);
    os << w << ',' << json(r.acc_mean).dump() << ',' << json(r.acc_std).dump() << ',' << r.flops << ',' << r.params
       << '\n';
  }
}

BenchmarkTable generate_benchmark(const SearchSpace& space, const TrainConfig& train, const DatasetConfig& data,
                                  int seeds, const std::string& family) {
  if (space.size() > kBenchmarkGenerationLimit) {
    throw Error("refusing to generate a benchmark of " + std::to_string(space.size()) + " widths (limit " +
                std::to_string(kBenchmarkGenerationLimit) + "); ingest an existing table instead");
  }
  if (seeds < 1) throw Error("need at least one seed");
  const auto widths = space.enumerate(kBenchmarkGenerationLimit);
  const FlopsTable ft = FlopsTable::dense(space);
  const SynthDataset ds = make_dataset(data);

  std::vector<uint64_t> seed_values;
  for (int s = 0; s < seeds; ++s) seed_values.push_back(derive_seed(train.seed, "bench/seed/" + std::to_string(s)));
  const std::size_t jobs = widths.size() * seed_values.size();
  std::vector<double> acc(jobs);
  parallel_for(jobs, [&](std::size_t j) {
    TrainConfig cfg = train;
    cfg.seed = seed_values[j % seed_values.size()];
    acc[j] = retrain_from_scratch(space, widths[j / seed_values.size()], cfg, ds);
  });

  BenchmarkTable t;
  t.metadata = {{"space", space.to_json()}, {"space_hash", hex64(space.hash())}, {"family", family},
                {"source", "retrain"}, {"seeds", seed_values}, {"train", train.to_json()},
                {"dataset", data.to_json()}};
  for (std::size_t w = 0; w < widths.size(); ++w) {
    const auto first = acc.begin() + static_cast<std::ptrdiff_t>(w * seed_values.size());
    const double mean = std::accumulate(first, first + seeds, 0.0) / seeds;
    double var = 0.0;
    for (auto it = first; it != first + seeds; ++it) var += (*it - mean) * (*it - mean);
    const double sd = seeds > 1 ? std::sqrt(var / (seeds - 1)) : 0.0;
    t.records.push_back({widths[w], mean, sd, ft.total(widths[w]), param_count(widths[w], space)});
  }
  return t;
}

json CorrelationReport::to_json() const {
  return {{"pearson", pearson}, {"spearman", spearman}, {"kendall_tau", kendall_tau}};
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("correlation inputs differ in length");
  if (x.size() < 2) throw Error("correlation needs at least two points");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y)) throw Error("correlation is undefined for a constant input");
}

// Sorts v[lo, hi) ascending, returning the number of strict inversions.
uint64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  uint64_t inv = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo;
  std::size_t j = mid;
  std::size_t k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += mid - i;
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

uint64_t tied_pairs(const std::vector<double>& sorted) {
  uint64_t total = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const uint64_t t = j - i;
    total += t * (t - 1) / 2;
    i = j;
  }
  return total;
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  std::vector<double> xs(n);
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[order[i]];
    ys[i] = y[order[i]];
  }
  const uint64_t x_ties = tied_pairs(xs);
  uint64_t joint_ties = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && xs[j] == xs[i] && ys[j] == ys[i]) ++j;
    const uint64_t t = j - i;
    joint_ties += t * (t - 1) / 2;
    i = j;
  }
  std::vector<double> buf(n);
  const uint64_t discordant = merge_count(ys, buf, 0, n);
  const uint64_t y_ties = tied_pairs(ys);
  const auto total = static_cast<double>(static_cast<uint64_t>(n) * (n - 1) / 2);
  const double numer = total - static_cast<double>(x_ties) - static_cast<double>(y_ties) +
                       static_cast<double>(joint_ties) - 2.0 * static_cast<double>(discordant);
  const double denom = std::sqrt((total - static_cast<double>(x_ties)) * (total - static_cast<double>(y_ties)));
  return std::clamp(numer / denom, -1.0, 1.0);
}

CorrelationReport correlate(std::span<const double> predicted, std::span<const double> truth) {
  check_pair(predicted, truth);
  const auto rp = average_ranks(predicted);
  const auto rt = average_ranks(truth);
  return {pearson(predicted, truth), pearson(rp, rt), kendall_tau_b(predicted, truth)};
}

CorrelationReport score_evaluator(const Evaluator& eval, const BenchmarkTable& table) {
  std::vector<WidthVector> widths;
  std::vector<double> truth;
  for (const auto& r : table.records) {
    widths.push_back(r.width);
    truth.push_back(r.acc_mean);
  }
  const auto reports = evaluate_many(eval, widths);
  std::vector<double> predicted;
  for (const auto& r : reports) predicted.push_back(r.acc_mean);
  return correlate(predicted, truth);
}

CorrelationReport score_supernet(const Supernet& sn, const BenchmarkTable& table, const Batch& val,
                                 const FlopsTable& flops) {
  if (!(table.space() == sn.space)) throw Error("the benchmark enumerates a different space than the supernet");
  return score_evaluator(supernet_evaluator(sn, val, flops), table);
}

namespace {

CorrelationReport against_accuracy(const BenchmarkTable& table, bool use_flops) {
  std::vector<double> x;
  std::vector<double> acc;
  for (const auto& r : table.records) {
    x.push_back(static_cast<double>(use_flops ? r.flops : r.params));
    acc.push_back(r.acc_mean);
  }
  return correlate(x, acc);
}

}  // namespace

CorrelationReport flops_correlation(const BenchmarkTable& table) { return against_accuracy(table, true); }
CorrelationReport params_correlation(const BenchmarkTable& table) { return against_accuracy(table, false); }

SyntheticOracle::SyntheticOracle(const SearchSpace& space, uint64_t seed, double noise)
    : space_(space), seed_(seed), noise_(noise) {
  Rng rng = substream(seed, "oracle/weights");
  std::gamma_distribution<double> gamma(2.0, 1.0);
  double sum = 0.0;
  for (std::size_t l = 0; l < space.num_layers(); ++l) {
    weights_.push_back(gamma(rng));
    sum += weights_.back();
  }
  for (double& w : weights_) w /= sum;
}

double SyntheticOracle::fitness(const WidthVector& c) const {
  space_.validate(c);
  double s = 0.0;
  for (std::size_t l = 0; l < c.size(); ++l) {
    s += weights_[l] * std::log(static_cast<double>(c[l]) / space_.layer(l).max_width);
  }
  Rng rng = substream(seed_, "oracle/noise/" + c.str());
  std::normal_distribution<double> gauss(0.0, 1.0);
  return 0.9 + 0.25 * s - 0.05 * s * s + noise_ * gauss(rng);
}

EvalReport SyntheticOracle::report(const WidthVector& c, const FlopsTable& table) const {
  EvalReport r;
  r.width = c;
  r.acc_left = fitness(c);
  r.acc_right = r.acc_left;
  r.acc_mean = r.acc_left;
  r.loss_mean = 1.0 - r.acc_mean;
  r.flops = table.total(c);
  return r;
}

Evaluator SyntheticOracle::evaluator(const FlopsTable& table) const {
  return [this, &table](const WidthVector& c) { return report(c, table); };
}

BenchmarkTable synthetic_benchmark(const SearchSpace& space, const SyntheticOracle& oracle, const FlopsTable& table) {
  BenchmarkTable t;
  t.metadata = {{"space", space.to_json()}, {"space_hash", hex64(space.hash())}, {"family", "synthetic"},
                {"source", "synthetic-oracle"}, {"seeds", json::array()}};
  for (const auto& c : space.enumerate()) {
    t.records.push_back({c, oracle.fitness(c), 0.0, table.total(c), param_count(c, space)});
  }
  return t;
}

LossLog synthetic_loss_log(const SearchSpace& space, const SyntheticOracle& oracle, std::size_t n, double noise,
                           Rng& rng) {
  LossLog log(std::max<std::size_t>(n, 1));
  std::normal_distribution<double> gauss(0.0, noise);
  for (std::size_t i = 0; i < n; ++i) {
    WidthVector c = sample_uniform(space, rng);
    const double loss = 1.0 - oracle.fitness(c) + gauss(rng);
    log.push({std::move(c), loss, LossSide::Both, static_cast<int64_t>(i + 1)});
  }
  return log;
}

}  // namespace widthsearch
