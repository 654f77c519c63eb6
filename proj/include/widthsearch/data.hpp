#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "json.hpp"
#include "widthsearch/net.hpp"

namespace widthsearch {

enum class Generator { GaussianBlobs, TwoSpirals };

struct DatasetConfig {
  uint64_t seed = 0;
  int n_train = 1024;
  int n_val = 512;
  Generator generator = Generator::GaussianBlobs;
  int num_classes = 4;
  int input_dim = 2;
  double noise = 1.0;

  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

// Train and validation halves come from one seeded draw of n_train + n_val
// samples: the first n_train rows train, the rest validate.
struct SynthDataset {
  Batch train;
  Batch val;
};

SynthDataset make_dataset(const DatasetConfig& config);

Batch gather(const Batch& source, std::span<const int> rows);

std::string generator_name(Generator g);
Generator parse_generator(const std::string& name);

}  // namespace widthsearch
