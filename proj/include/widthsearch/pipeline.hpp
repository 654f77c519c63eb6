#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "widthsearch/bench.hpp"
#include "widthsearch/data.hpp"
#include "widthsearch/evo.hpp"
#include "widthsearch/prior.hpp"
#include "widthsearch/supertrain.hpp"

namespace widthsearch {

enum class SearchMethod { Evo, EvoPrior, Greedy, Random, Uniform };
std::string method_name(SearchMethod m);
SearchMethod parse_method(const std::string& s);

enum class OracleKind { None, Synthetic };

// "0.5x" is a fraction of the full-width FLOPs, "median" the median FLOPs
// over the enumerated space, anything else an absolute FLOPs count.
int64_t resolve_budget(const std::string& spec, const SearchSpace& space, const FlopsTable& table);

struct RunConfig {
  SearchSpace space;
  DatasetConfig data;
  TrainConfig train;
  TrainConfig retrain;
  EvoConfig evo;
  SolverConfig solver;
  std::size_t prior_m = 100;
  std::string budget = "0.5x";
  SearchMethod method = SearchMethod::Evo;
  OracleKind oracle = OracleKind::None;
  uint64_t seed = 0;
  int random_candidates = 20;
  std::size_t synthetic_log_size = 4096;

  // Copy whose stage seeds are derived from `seed`.
  RunConfig resolved() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  uint64_t hash() const;
};

// Raised when a pipeline stage fails; artifacts of earlier stages stay on disk.
class StageFailure : public Error {
 public:
  StageFailure(std::string stage, const std::string& message);
  std::string stage;
};

// train -> prior (evo-prior only) -> search -> retrain -> report. Returns
// the report that is also written to out/report.json.
nlohmann::json run_pipeline(const RunConfig& config, const std::filesystem::path& out);

// Throws when `artifact` names a config hash other than `expected`.
void check_config_hash(const nlohmann::json& artifact, uint64_t expected, const std::string& what);

void write_json(const std::filesystem::path& file, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& file);

void write_history_csv(const std::filesystem::path& file, const std::vector<IterationStats>& history,
                       uint64_t config_hash);

}  // namespace widthsearch
