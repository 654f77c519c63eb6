#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "widthsearch/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace widthsearch;

namespace {

struct Options {
  std::string config;
  std::string space;
  std::optional<uint64_t> seed;
  std::string principle;
  std::string overlap;
  bool complementary = false;
  std::string update_mode;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
  bool normalize = false;
  std::string budget;
  std::string method;
  std::string oracle;
  std::string out;
};

void add_space(CLI::App* cmd, Options& o, bool required = true) {
  auto* opt = cmd->add_option("--space", o.space, "search space JSON file");
  if (required) opt->required();
}

void add_training(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "run config JSON; flags override its fields");
  cmd->add_option("--seed", o.seed, "root seed");
  cmd->add_option("--principle", o.principle, "channel assignment principle")
      ->check(CLI::IsMember({"ua", "bc", "bcv2"}));
  cmd->add_option("--overlap", o.overlap, "bcv2 physical width mode")
      ->check(CLI::IsMember({"exact-fair", "paper-literal"}));
  cmd->add_flag("--complementary", o.complementary, "also train the complementary width of every sample");
  cmd->add_option("--update-mode", o.update_mode, "both paths per batch, or odd/even alternation")
      ->check(CLI::IsMember({"both", "iterative"}));
  cmd->add_option("--epochs", o.epochs, "supernet training epochs")->check(CLI::PositiveNumber);
  cmd->add_option("--batch-size", o.batch_size, "training batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", o.lr, "initial learning rate");
  cmd->add_flag("--normalize", o.normalize, "standardize hidden features with batch statistics");
}

void add_search(CLI::App* cmd, Options& o) {
  cmd->add_option("--budget", o.budget, "FLOPs budget: absolute count, ratio like 0.5x, or median");
  cmd->add_option("--method", o.method, "search method")
      ->check(CLI::IsMember({"evo", "evo-prior", "greedy", "random", "uniform"}));
  cmd->add_option("--oracle", o.oracle, "replace the supernet by an analytic fitness (harness only)")
      ->check(CLI::IsMember({"none", "synthetic"}));
}

RunConfig build_config(const Options& o) {
  RunConfig c;
  if (!o.config.empty()) {
    c = RunConfig::from_json(read_json(o.config));
  }
  if (!o.space.empty()) {
    c.space = SearchSpace::from_json(read_json(o.space));
    c.data.input_dim = c.space.input_dim();
    c.data.num_classes = c.space.output_dim();
  }
  if (c.space.num_layers() == 0) throw Error("no search space given (--space or --config)");
  if (o.seed) c.seed = *o.seed;
  if (!o.principle.empty() || !o.overlap.empty()) {
    c.train.principle = Principle::parse(o.principle.empty() ? c.train.principle.name() : o.principle,
                                         o.overlap.empty() ? c.train.principle.overlap_name() : o.overlap);
  }
  if (o.complementary) c.train.complementary = true;
  if (!o.update_mode.empty()) {
    c.train.update_mode = o.update_mode == "iterative" ? UpdateMode::Iterative : UpdateMode::BothPaths;
  }
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.batch_size) {
    c.train.batch_size = *o.batch_size;
    c.retrain.batch_size = *o.batch_size;
  }
  if (o.lr) c.train.lr0 = *o.lr;
  if (o.normalize) c.train.normalize = true;
  if (!o.budget.empty()) c.budget = o.budget;
  if (!o.method.empty()) c.method = parse_method(o.method);
  if (!o.oracle.empty()) c.oracle = o.oracle == "synthetic" ? OracleKind::Synthetic : OracleKind::None;
  return c;
}

fs::path out_dir(const Options& o) {
  if (o.out.empty()) throw Error("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

WidthVector parse_width(const std::string& text) {
  std::vector<int> w;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const int v = std::stoi(item, &used);
    if (used != item.size()) throw Error("cannot read width '" + text + "'");
    w.push_back(v);
  }
  return WidthVector(std::move(w));
}

json stamp(uint64_t config_hash, const SearchSpace& space) {
  return {{"config_hash", hex64(config_hash)}, {"space_hash", hex64(space.hash())}};
}

void check_space(const json& artifact, const SearchSpace& space, const std::string& what) {
  if (!artifact.contains("space_hash")) throw Error(what + " carries no space hash");
  if (parse_hex64(artifact["space_hash"].get<std::string>()) != space.hash()) {
    throw Error(what + " was produced for a different search space");
  }
}

Supernet load_supernet(const std::string& file, const RunConfig& cfg) {
  CheckpointInfo info;
  MiniNet net = load_checkpoint(file, &info);
  if (info.space_hash != cfg.space.hash()) throw Error(file + " was trained on a different search space");
  return Supernet::wrap(cfg.space, cfg.train.principle, std::move(net));
}

int cmd_space(const Options& o, const std::string& widths) {
  const RunConfig cfg = build_config(o);
  const SearchSpace& sp = cfg.space;
  const FlopsTable table = FlopsTable::dense(sp);
  json summary = {{"space_hash", hex64(sp.hash())},
                  {"size", sp.size()},
                  {"genes", sp.num_genes()},
                  {"max_flops", table.total(sp.max_widths())},
                  {"min_flops", table.total(sp.min_widths())},
                  {"grids", json::array()}};
  for (std::size_t l = 0; l < sp.num_layers(); ++l) summary["grids"].push_back(sp.grid(l));
  if (!widths.empty()) {
    const WidthVector c = parse_width(widths);
    sp.validate(c);
    summary["width"] = c.widths;
    summary["flops"] = table.total(c);
    summary["params"] = param_count(c, sp);
    summary["complement"] = complement(c, sp).widths;
  }
  if (!o.out.empty()) {
    const fs::path dir = out_dir(o);
    write_json(dir / "space.json", sp.to_json());
    json ft = table.to_json();
    ft.update(stamp(cfg.hash(), sp));
    write_json(dir / "flops.json", ft);
  }
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = build_config(o).resolved();
  const fs::path dir = out_dir(o);
  const uint64_t hash = cfg.hash();
  json config = cfg.to_json();
  config["config_hash"] = hex64(hash);
  write_json(dir / "run_config.json", config);
  json ft = FlopsTable::dense(cfg.space).to_json();
  ft.update(stamp(hash, cfg.space));
  write_json(dir / "flops.json", ft);

  const SynthDataset data = make_dataset(cfg.data);
  Rng init = substream(cfg.train.seed, "train/init");
  Supernet sn = Supernet::create(cfg.space, cfg.train.principle, cfg.train.normalize, init);
  const TrainResult tr = train_supernet(sn, cfg.train, data.train);
  save_checkpoint(dir / "checkpoint.bin", sn.net, {hash, cfg.space.hash()});
  json header = stamp(hash, cfg.space);
  header["source"] = "supernet";
  tr.log.write_jsonl(dir / "losslog.jsonl", header);
  json counts = json::array();
  for (const auto& layer : tr.channel_counts) counts.push_back(layer);
  std::cout << json{{"steps", tr.steps}, {"last_epoch_loss", tr.last_epoch_loss},
                    {"peak_activations", tr.peak_activations}, {"channel_counts", counts}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_audit(const std::string& principle, const std::string& overlap, int max_width, int base_width, int grid_count,
              bool ungrouped) {
  const Principle p = Principle::parse(principle, overlap);
  const LayerSpec layer{max_width, base_width, grid_count, std::nullopt};
  std::vector<int> widths;
  if (ungrouped) {
    for (int c = std::max(1, base_width); c <= max_width; ++c) widths.push_back(c);
  } else {
    widths = build_grid(layer);
  }
  const auto counts = cardinality_audit(p, layer, widths);
  std::cout << "channel,count\n";
  for (std::size_t i = 0; i < counts.size(); ++i) std::cout << i + 1 << ',' << counts[i] << '\n';
  return 0;
}

int cmd_prior(const Options& o, const std::string& losslog, const std::string& flops_file, std::size_t m,
              int population) {
  const RunConfig cfg = build_config(o).resolved();
  json header;
  const LossLog log = LossLog::read_jsonl(losslog, &header);
  const json flops_json = read_json(flops_file);
  check_space(header, cfg.space, losslog);
  check_space(flops_json, cfg.space, flops_file);
  if (header.contains("config_hash") && flops_json.contains("config_hash") &&
      header["config_hash"] != flops_json["config_hash"]) {
    throw Error(losslog + " and " + flops_file + " come from different runs");
  }
  const FlopsTable table = FlopsTable::from_json(flops_json);
  const int64_t budget = resolve_budget(cfg.budget, cfg.space, table);
  const PotentialErrorTable errors = build_error_table(log, cfg.space, m);
  const SolveResult solved = solve_distribution(errors, cfg.space, table, budget, cfg.solver);
  Rng rng = substream(cfg.solver.seed, "prior/sample");
  const auto pop =
      sample_population(solved.dist, cfg.space, table, budget, static_cast<std::size_t>(population), rng);

  const fs::path dir = out_dir(o);
  const json st = stamp(cfg.hash(), cfg.space);
  json dist = solved.dist.to_json(cfg.space);
  dist.update(st);
  dist["objective"] = solved.objective;
  dist["expected_flops"] = solved.expected_flops;
  dist["budget"] = budget;
  dist["errors"] = errors.to_json();
  write_json(dir / "prior_dist.json", dist);
  json pj = st;
  pj["widths"] = json::array();
  for (const auto& c : pop) pj["widths"].push_back(c.widths);
  write_json(dir / "population.json", pj);
  std::cout << json{{"objective", solved.objective}, {"expected_flops", solved.expected_flops}, {"budget", budget},
                    {"population", pop.size()}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_search(const Options& o, const std::string& checkpoint, const std::string& losslog) {
  RunConfig cfg = build_config(o).resolved();
  const fs::path dir = out_dir(o);
  const uint64_t hash = cfg.hash();
  const FlopsTable table = FlopsTable::dense(cfg.space);
  const int64_t budget = resolve_budget(cfg.budget, cfg.space, table);

  std::optional<SyntheticOracle> oracle;
  std::optional<SynthDataset> data;
  std::optional<Supernet> sn;
  Evaluator eval;
  if (cfg.oracle == OracleKind::Synthetic) {
    oracle.emplace(cfg.space, cfg.seed);
    eval = oracle->evaluator(table);
  } else {
    if (checkpoint.empty()) throw Error("search needs --checkpoint or --oracle synthetic");
    data = make_dataset(cfg.data);
    sn = load_supernet(checkpoint, cfg);
    eval = supernet_evaluator(*sn, data->val, table);
  }

  SearchResult r;
  switch (cfg.method) {
    case SearchMethod::Evo: {
      Rng rng = substream(cfg.evo.seed, "evo/init");
      r = evolve(eval, cfg.space, table, budget, cfg.evo,
                 sample_feasible_uniform(cfg.space, table, budget,
                                         static_cast<std::size_t>(cfg.evo.population_size), rng));
      break;
    }
    case SearchMethod::EvoPrior: {
      LossLog log;
      if (!losslog.empty()) {
        json header;
        log = LossLog::read_jsonl(losslog, &header);
        check_space(header, cfg.space, losslog);
      } else if (oracle) {
        Rng rng = substream(cfg.seed, "train/synthetic-log");
        log = synthetic_loss_log(cfg.space, *oracle, cfg.synthetic_log_size, 0.01, rng);
      } else {
        throw Error("evo-prior needs --losslog");
      }
      const auto errors = build_error_table(log, cfg.space, cfg.prior_m);
      const auto solved = solve_distribution(errors, cfg.space, table, budget, cfg.solver);
      Rng rng = substream(cfg.solver.seed, "prior/sample");
      r = evolve(eval, cfg.space, table, budget, cfg.evo,
                 sample_population(solved.dist, cfg.space, table, budget,
                                   static_cast<std::size_t>(cfg.evo.population_size), rng));
      break;
    }
    case SearchMethod::Greedy:
      r = greedy_slim(eval, cfg.space, table, budget);
      break;
    case SearchMethod::Random: {
      Rng rng = substream(cfg.evo.seed, "random");
      const auto candidates =
          random_search(cfg.space, table, budget, static_cast<std::size_t>(cfg.random_candidates), rng);
      const auto reports = evaluate_many(eval, candidates);
      r.best = *std::min_element(reports.begin(), reports.end(), ranks_before);
      r.evaluations = reports.size();
      r.history.push_back({1, r.best.acc_mean, 0.0, r.best.width});
      for (const auto& rep : reports) r.history.back().mean_fitness += rep.acc_mean / reports.size();
      break;
    }
    case SearchMethod::Uniform:
      r.best = eval(uniform_baseline(cfg.space, table, budget));
      r.evaluations = 1;
      r.history.push_back({1, r.best.acc_mean, r.best.acc_mean, r.best.width});
      break;
  }
  write_history_csv(dir / "history.csv", r.history, hash);
  json best = stamp(hash, cfg.space);
  best["widths"] = r.best.width.widths;
  best["flops"] = r.best.flops;
  best["report"] = r.best.to_json();
  write_json(dir / "best_width.json", best);
  std::cout << r.best.to_json().dump() << '\n';
  return 0;
}

int cmd_eval(const Options& o, const std::string& checkpoint, const std::vector<std::string>& widths, bool all) {
  const RunConfig cfg = build_config(o).resolved();
  const FlopsTable table = FlopsTable::dense(cfg.space);
  std::vector<WidthVector> list;
  for (const auto& w : widths) list.push_back(parse_width(w));
  if (all) list = cfg.space.enumerate();
  if (list.empty()) throw Error("nothing to evaluate: pass --width or --all");
  for (const auto& c : list) cfg.space.validate(c);

  std::optional<SyntheticOracle> oracle;
  std::optional<SynthDataset> data;
  std::optional<Supernet> sn;
  Evaluator eval;
  if (cfg.oracle == OracleKind::Synthetic) {
    oracle.emplace(cfg.space, cfg.seed);
    eval = oracle->evaluator(table);
  } else {
    if (checkpoint.empty()) throw Error("eval needs --checkpoint or --oracle synthetic");
    data = make_dataset(cfg.data);
    sn = load_supernet(checkpoint, cfg);
    eval = supernet_evaluator(*sn, data->val, table);
  }
  for (const auto& r : evaluate_many(eval, list)) std::cout << r.to_json().dump() << '\n';
  return 0;
}

std::map<WidthVector, double> read_predictions(const std::string& file) {
  std::ifstream is(file);
  if (!is) throw Error("cannot open " + file);
  std::map<WidthVector, double> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    // Benchmark tables work too: skip the header, records say "widths".
    if (j.value("type", std::string()) == "header") continue;
    out[width_from_json(j.contains("width") ? j.at("width") : j.at("widths"))] = j.at("acc_mean").get<double>();
  }
  return out;
}

int cmd_bench_generate(const Options& o, int seeds, const std::string& table_file, const std::string& csv) {
  RunConfig cfg = build_config(o).resolved();
  const FlopsTable flops = FlopsTable::dense(cfg.space);
  BenchmarkTable t;
  if (cfg.oracle == OracleKind::Synthetic) {
    t = synthetic_benchmark(cfg.space, SyntheticOracle(cfg.space, cfg.seed), flops);
  } else {
    t = generate_benchmark(cfg.space, cfg.retrain, cfg.data, seeds);
  }
  t.metadata["config_hash"] = hex64(cfg.hash());
  t.validate();
  t.write_jsonl(table_file);
  if (!csv.empty()) t.write_csv(csv);
  std::cout << json{{"records", t.records.size()},
                    {"flops_correlation", flops_correlation(t).to_json()},
                    {"params_correlation", params_correlation(t).to_json()}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_bench_score(const Options& o, const std::string& table_file, const std::string& checkpoint) {
  RunConfig cfg = build_config(o).resolved();
  const BenchmarkTable t = BenchmarkTable::read_jsonl(table_file);
  t.validate();
  if (!(t.space() == cfg.space)) throw Error(table_file + " enumerates a different space");
  const FlopsTable flops = FlopsTable::dense(cfg.space);
  CorrelationReport r;
  if (cfg.oracle == OracleKind::Synthetic) {
    SyntheticOracle oracle(cfg.space, cfg.seed);
    r = score_evaluator(oracle.evaluator(flops), t);
  } else {
    if (checkpoint.empty()) throw Error("bench score needs --checkpoint or --oracle synthetic");
    const SynthDataset data = make_dataset(cfg.data);
    const Supernet sn = load_supernet(checkpoint, cfg);
    r = score_supernet(sn, t, data.val, flops);
  }
  std::cout << r.to_json().dump() << '\n';
  return 0;
}

int cmd_bench_correlate(const std::string& table_file, const std::string& against) {
  const BenchmarkTable t = BenchmarkTable::read_jsonl(table_file);
  t.validate();
  json out;
  if (against == "flops") {
    out = flops_correlation(t).to_json();
  } else if (against == "params") {
    out = params_correlation(t).to_json();
  } else {
    const auto pred = read_predictions(against);
    std::vector<double> x;
    std::vector<double> y;
    for (const auto& r : t.records) {
      const auto it = pred.find(r.width);
      if (it == pred.end()) throw Error(against + " has no prediction for " + r.width.str());
      x.push_back(it->second);
      y.push_back(r.acc_mean);
    }
    out = correlate(x, y).to_json();
  }
  std::cout << out.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-width search with bilaterally coupled supernets"};
  app.require_subcommand(1);
  Options o;

  auto* space = app.add_subcommand("space", "validate a search space, print its grids and FLOPs range");
  add_space(space, o, false);
  space->add_option("--config", o.config, "run config JSON");
  std::string width_text;
  space->add_option("--width", width_text, "also report FLOPs, params and complement of this width (e.g. 3,2,4)");
  space->add_option("--out", o.out, "write space.json and flops.json here");

  auto* train = app.add_subcommand("train", "train a supernet; writes checkpoint.bin and losslog.jsonl");
  add_space(train, o, false);
  add_training(train, o);
  train->add_option("--out", o.out, "output directory")->required();

  auto* audit = app.add_subcommand("audit", "per-channel cardinality CSV for one layer");
  std::string audit_principle = "bc";
  std::string audit_overlap = "exact-fair";
  int max_width = 0;
  int base_width = 0;
  int grid_count = 0;
  bool ungrouped = false;
  audit->add_option("--principle", audit_principle, "channel assignment principle")
      ->check(CLI::IsMember({"ua", "bc", "bcv2"}));
  audit->add_option("--overlap", audit_overlap, "bcv2 physical width mode")
      ->check(CLI::IsMember({"exact-fair", "paper-literal"}));
  audit->add_option("--max-width", max_width, "layer width l")->required();
  audit->add_option("--base-width", base_width, "base width l_s");
  audit->add_option("--grid-count", grid_count, "number of grid widths (default: every width)");
  audit->add_flag("--ungrouped", ungrouped, "audit every integer width from max(1, l_s) to l");

  auto* prior = app.add_subcommand("prior", "solve the prior sampling distribution and draw a population");
  add_space(prior, o, false);
  add_training(prior, o);
  add_search(prior, o);
  std::string losslog;
  std::string flops_file;
  std::size_t prior_m = 100;
  int population = 40;
  prior->add_option("--losslog", losslog, "losslog.jsonl from train")->required();
  prior->add_option("--flops", flops_file, "flops.json from the same run")->required();
  prior->add_option("--top", prior_m, "number of lowest-loss records used");
  prior->add_option("--population", population, "population size")->check(CLI::PositiveNumber);
  prior->add_option("--out", o.out, "output directory")->required();

  auto* search = app.add_subcommand("search", "budgeted width search; writes history.csv and best_width.json");
  add_space(search, o, false);
  add_training(search, o);
  add_search(search, o);
  std::string checkpoint;
  search->add_option("--checkpoint", checkpoint, "trained supernet");
  search->add_option("--losslog", losslog, "loss history for evo-prior");
  search->add_option("--out", o.out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "bilateral evaluation; one JSON line per width");
  add_space(eval, o, false);
  add_training(eval, o);
  add_search(eval, o);
  std::vector<std::string> widths;
  bool all = false;
  eval->add_option("--checkpoint", checkpoint, "trained supernet");
  eval->add_option("--width", widths, "width to evaluate, e.g. 3,2,4 (repeatable)");
  eval->add_flag("--all", all, "evaluate every width of the space");

  auto* bench = app.add_subcommand("bench", "benchmark tables and rank correlation");
  bench->require_subcommand(1);
  auto* generate = bench->add_subcommand("generate", "retrain every width of a small space");
  add_space(generate, o, false);
  add_training(generate, o);
  add_search(generate, o);
  int seeds = 3;
  std::string table_file;
  std::string csv;
  generate->add_option("--seeds", seeds, "retrain seeds per width")->check(CLI::PositiveNumber);
  generate->add_option("--table", table_file, "output JSON Lines table")->required();
  generate->add_option("--csv", csv, "also write a CSV export");

  auto* score = bench->add_subcommand("score", "rank correlation of a supernet against a table");
  add_space(score, o, false);
  add_training(score, o);
  add_search(score, o);
  score->add_option("--table", table_file, "benchmark table")->required();
  score->add_option("--checkpoint", checkpoint, "trained supernet");

  auto* corr = bench->add_subcommand("correlate", "correlate table accuracy with flops, params or predictions");
  std::string against = "flops";
  corr->add_option("--table", table_file, "benchmark table")->required();
  corr->add_option("--against", against, "flops, params, or a JSON Lines file of eval reports or another table");

  auto* run = app.add_subcommand("run", "train, search, retrain the best width, write report.json");
  add_space(run, o, false);
  add_training(run, o);
  add_search(run, o);
  run->add_option("--out", o.out, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*space) return cmd_space(o, width_text);
    if (*train) return cmd_train(o);
    if (*audit) {
      if (grid_count == 0) grid_count = base_width > 0 ? max_width - base_width + 1 : max_width;
      return cmd_audit(audit_principle, audit_overlap, max_width, base_width, grid_count, ungrouped);
    }
    if (*prior) return cmd_prior(o, losslog, flops_file, prior_m, population);
    if (*search) return cmd_search(o, checkpoint, losslog);
    if (*eval) return cmd_eval(o, checkpoint, widths, all);
    if (*generate) return cmd_bench_generate(o, seeds, table_file, csv);
    if (*score) return cmd_bench_score(o, table_file, checkpoint);
    if (*corr) return cmd_bench_correlate(table_file, against);
    if (*run) {
      const json report = run_pipeline(build_config(o), out_dir(o));
      std::cout << report.dump() << '\n';
      return 0;
    }
  } catch (const StageFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
