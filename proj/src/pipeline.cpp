#include "widthsearch/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <optional>

namespace widthsearch {

using nlohmann::json;

std::string method_name(SearchMethod m) {
  switch (m) {
    case SearchMethod::Evo: return "evo";
    case SearchMethod::EvoPrior: return "evo-prior";
    case SearchMethod::Greedy: return "greedy";
    case SearchMethod::Random: return "random";
    case SearchMethod::Uniform: return "uniform";
  }
  return "?";
}

SearchMethod parse_method(const std::string& s) {
  for (auto m : {SearchMethod::Evo, SearchMethod::EvoPrior, SearchMethod::Greedy, SearchMethod::Random,
                 SearchMethod::Uniform}) {
    if (method_name(m) == s) return m;
  }
  throw Error("unknown search method '" + s + "' (evo, evo-prior, greedy, random, uniform)");
}

int64_t resolve_budget(const std::string& spec, const SearchSpace& space, const FlopsTable& table) {
  if (spec.empty()) throw Error("empty budget");
  try {
    if (spec == "median") {
      std::vector<int64_t> all;
      for (const auto& c : space.enumerate()) all.push_back(table.total(c));
      std::sort(all.begin(), all.end());
      return all[(all.size() - 1) / 2];
    }
    std::size_t used = 0;
    if (spec.back() == 'x') {
      const double ratio = std::stod(spec.substr(0, spec.size() - 1), &used);
      if (used != spec.size() - 1 || !(ratio > 0.0)) throw Error("");
      return static_cast<int64_t>(ratio * static_cast<double>(table.total(space.max_widths())));
    }
    const long long v = std::stoll(spec, &used);
    if (used != spec.size() || v <= 0) throw Error("");
    return v;
  } catch (const std::logic_error&) {
  } catch (const Error&) {
  }
  throw Error("cannot read budget '" + spec + "': expected FLOPs, a ratio like 0.5x, or median");
}

RunConfig RunConfig::resolved() const {
  RunConfig r = *this;
  r.data.seed = derive_seed(seed, "data");
  r.train.seed = derive_seed(seed, "train");
  r.retrain.seed = derive_seed(seed, "retrain");
  r.evo.seed = derive_seed(seed, "evo");
  r.solver.seed = derive_seed(seed, "prior");
  return r;
}

json RunConfig::to_json() const {
  return {{"space", space.to_json()},
          {"data", data.to_json()},
          {"train", train.to_json()},
          {"retrain", retrain.to_json()},
          {"evo", evo.to_json()},
          {"solver", solver.to_json()},
          {"prior_m", prior_m},
          {"budget", budget},
          {"method", method_name(method)},
          {"oracle", oracle == OracleKind::Synthetic ? "synthetic" : "none"},
          {"seed", seed},
          {"random_candidates", random_candidates},
          {"synthetic_log_size", synthetic_log_size}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  c.space = SearchSpace::from_json(j.at("space"));
  if (j.contains("data")) c.data = DatasetConfig::from_json(j["data"]);
  if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
  if (j.contains("retrain")) c.retrain = TrainConfig::from_json(j["retrain"]);
  if (j.contains("evo")) c.evo = EvoConfig::from_json(j["evo"]);
  if (j.contains("solver")) c.solver = SolverConfig::from_json(j["solver"]);
  c.prior_m = j.value("prior_m", c.prior_m);
  c.budget = j.value("budget", c.budget);
  c.method = parse_method(j.value("method", method_name(c.method)));
  const std::string oracle = j.value("oracle", std::string("none"));
  if (oracle == "synthetic") {
    c.oracle = OracleKind::Synthetic;
  } else if (oracle != "none") {
    throw Error("unknown oracle '" + oracle + "'");
  }
  c.seed = j.value("seed", c.seed);
  c.random_candidates = j.value("random_candidates", c.random_candidates);
  c.synthetic_log_size = j.value("synthetic_log_size", c.synthetic_log_size);
  return c;
}

uint64_t RunConfig::hash() const { return fnv1a64(resolved().to_json().dump()); }

StageFailure::StageFailure(std::string stage_name, const std::string& message)
    : Error("stage '" + stage_name + "' failed: " + message), stage(std::move(stage_name)) {}

void check_config_hash(const json& artifact, uint64_t expected, const std::string& what) {
  if (!artifact.contains("config_hash")) throw Error(what + " carries no config hash");
  const auto got = parse_hex64(artifact["config_hash"].get<std::string>());
  if (got != expected) {
    throw Error(what + " belongs to run " + hex64(got) + ", not " + hex64(expected));
  }
}

void write_json(const std::filesystem::path& file, const json& j) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw Error("cannot write " + file.string());
  os << j.dump(2) << '\n';
}

json read_json(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw Error("cannot open " + file.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw Error(file.string() + ": " + e.what());
  }
}

void write_history_csv(const std::filesystem::path& file, const std::vector<IterationStats>& history,
                       uint64_t config_hash) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw Error("cannot write " + file.string());
  os << "config_hash,iteration,best_fitness,mean_fitness,best_width\n";
  for (const auto& h : history) {
    std::string w;
    for (std::size_t i = 0; i < h.best.size(); ++i) w += (i ? "-" : "") + std::to_string(h.best[i]);
    os << hex64(config_hash) << ',' << h.iteration << ',' << json(h.best_fitness).dump() << ','
       << json(h.mean_fitness).dump() << ',' << w << '\n';
  }
}

namespace {

template <class F>
auto stage(const std::string& name, F&& body) {
  try {
    return body();
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure(name, e.what());
  }
}

json history_json(const std::vector<IterationStats>& history) {
  json h = json::array();
  for (const auto& s : history) {
    h.push_back({{"iteration", s.iteration}, {"best_fitness", s.best_fitness}, {"mean_fitness", s.mean_fitness},
                 {"best", s.best.widths}});
  }
  return h;
}

}  // namespace

json run_pipeline(const RunConfig& config, const std::filesystem::path& out) {
  const RunConfig cfg = config.resolved();
  const uint64_t hash = cfg.hash();
  const std::string hash_hex = hex64(hash);
  const SearchSpace& space = cfg.space;
  const std::string space_hex = hex64(space.hash());
  const json stamp = {{"config_hash", hash_hex}, {"space_hash", space_hex}};

  std::filesystem::create_directories(out);
  const auto config_file = out / "run_config.json";
  if (std::filesystem::exists(config_file)) {
    check_config_hash(read_json(config_file), hash, config_file.string());
  }
  json config_json = cfg.to_json();
  config_json["config_hash"] = hash_hex;
  write_json(config_file, config_json);

  const FlopsTable table = FlopsTable::dense(space);
  const int64_t budget = stage("setup", [&] {
    cfg.train.validate();
    cfg.retrain.validate();
    cfg.evo.validate();
    if (cfg.data.input_dim != space.input_dim() || cfg.data.num_classes != space.output_dim()) {
      throw Error("dataset dimensions do not match the space input/output dimensions");
    }
    const int64_t b = resolve_budget(cfg.budget, space, table);
    const int64_t minimum = table.total(space.min_widths());
    if (b < minimum) throw InfeasibleBudget(b, minimum);
    json ft = table.to_json();
    ft.update(stamp);
    write_json(out / "flops.json", ft);
    return b;
  });

  const bool synthetic = cfg.oracle == OracleKind::Synthetic;
  std::optional<SyntheticOracle> oracle;
  std::optional<SynthDataset> dataset;
  std::optional<Supernet> supernet;
  LossLog log;

  stage("train", [&] {
    if (synthetic) {
      oracle.emplace(space, cfg.seed);
      Rng rng = substream(cfg.seed, "train/synthetic-log");
      log = synthetic_loss_log(space, *oracle, cfg.synthetic_log_size, 0.01, rng);
    } else {
      dataset = make_dataset(cfg.data);
      Rng init = substream(cfg.train.seed, "train/init");
      supernet = Supernet::create(space, cfg.train.principle, cfg.train.normalize, init);
      TrainResult tr = train_supernet(*supernet, cfg.train, dataset->train);
      log = std::move(tr.log);
      save_checkpoint(out / "checkpoint.bin", supernet->net, {hash, space.hash()});
    }
    json header = stamp;
    header["source"] = synthetic ? "synthetic-oracle" : "supernet";
    log.write_jsonl(out / "losslog.jsonl", header);
    return 0;
  });

  const Evaluator eval = synthetic ? oracle->evaluator(table) : supernet_evaluator(*supernet, dataset->val, table);

  std::vector<WidthVector> init;
  if (cfg.method == SearchMethod::EvoPrior) {
    stage("prior", [&] {
      const PotentialErrorTable errors = build_error_table(log, space, cfg.prior_m);
      const SolveResult solved = solve_distribution(errors, space, table, budget, cfg.solver);
      Rng rng = substream(cfg.solver.seed, "prior/sample");
      init = sample_population(solved.dist, space, table, budget, static_cast<std::size_t>(cfg.evo.population_size),
                               rng);
      json dist = solved.dist.to_json(space);
      dist.update(stamp);
      dist["objective"] = solved.objective;
      dist["expected_flops"] = solved.expected_flops;
      dist["budget"] = budget;
      write_json(out / "prior_dist.json", dist);
      json pop = stamp;
      pop["widths"] = json::array();
      for (const auto& c : init) pop["widths"].push_back(c.widths);
      write_json(out / "population.json", pop);
      return 0;
    });
  }

  auto retrain = [&](const WidthVector& c, const TrainConfig& tc) {
    if (synthetic) return oracle->fitness(c);
    return retrain_from_scratch(space, c, tc, *dataset);
  };

  const SearchResult found = stage("search", [&] {
    SearchResult r;
    switch (cfg.method) {
      case SearchMethod::Evo: {
        Rng rng = substream(cfg.evo.seed, "evo/init");
        init = sample_feasible_uniform(space, table, budget, static_cast<std::size_t>(cfg.evo.population_size), rng);
        r = evolve(eval, space, table, budget, cfg.evo, init);
        break;
      }
      case SearchMethod::EvoPrior:
        r = evolve(eval, space, table, budget, cfg.evo, init);
        break;
      case SearchMethod::Greedy:
        r = greedy_slim(eval, space, table, budget);
        break;
      case SearchMethod::Random: {
        Rng rng = substream(cfg.evo.seed, "random");
        const auto candidates =
            random_search(space, table, budget, static_cast<std::size_t>(cfg.random_candidates), rng);
        TrainConfig quick = cfg.retrain;
        quick.epochs = std::max(1, cfg.retrain.epochs / 4);
        std::vector<double> acc(candidates.size());
        parallel_for(candidates.size(), [&](std::size_t i) { acc[i] = retrain(candidates[i], quick); });
        std::size_t best = 0;
        for (std::size_t i = 1; i < candidates.size(); ++i) {
          const bool better = acc[i] != acc[best] ? acc[i] > acc[best]
                                                  : std::pair(table.total(candidates[i]), candidates[i]) <
                                                        std::pair(table.total(candidates[best]), candidates[best]);
          if (better) best = i;
        }
        r.best = eval(candidates[best]);
        r.evaluations = candidates.size();
        r.history.push_back({1, acc[best], 0.0, candidates[best]});
        double sum = 0.0;
        for (double a : acc) sum += a;
        r.history.back().mean_fitness = sum / static_cast<double>(acc.size());
        break;
      }
      case SearchMethod::Uniform:
        r.best = eval(uniform_baseline(space, table, budget));
        r.evaluations = 1;
        r.history.push_back({1, r.best.acc_mean, r.best.acc_mean, r.best.width});
        break;
    }
    write_history_csv(out / "history.csv", r.history, hash);
    json best = stamp;
    best["widths"] = r.best.width.widths;
    best["flops"] = r.best.flops;
    write_json(out / "best_width.json", best);
    return r;
  });

  const double retrained = stage("retrain", [&] { return retrain(found.best.width, cfg.retrain); });

  return stage("report", [&] {
    json report = stamp;
    report["method"] = method_name(cfg.method);
    report["oracle"] = synthetic ? "synthetic" : "none";
    report["budget"] = budget;
    report["width"] = found.best.width.widths;
    report["flops"] = found.best.flops;
    report["params"] = param_count(found.best.width, space);
    report["supernet"] = found.best.to_json();
    report["supernet_acc"] = found.best.acc_mean;
    report["retrained_acc"] = retrained;
    report["evaluations"] = found.evaluations;
    report["history"] = history_json(found.history);
    write_json(out / "report.json", report);
    return report;
  });
}

}  // namespace widthsearch
