#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "widthsearch/assign.hpp"
#include "widthsearch/net.hpp"
#include "widthsearch/space.hpp"

namespace widthsearch {

enum class UpdateMode { BothPaths, Iterative };

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double lr0 = 0.1;
  double lr_min = 0.0;
  double momentum = 0.9;
  uint64_t seed = 0;
  Principle principle;
  bool complementary = false;
  UpdateMode update_mode = UpdateMode::BothPaths;
  // false: c and its complement share one optimizer update with half
  // weight each; true: each gets its own update.
  bool separate_complement_updates = false;
  bool normalize = false;
  std::size_t losslog_capacity = 1 << 16;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

double cosine_lr(const TrainConfig& cfg, int64_t step, int64_t total_steps);

enum class LossSide { Left, Right, Both };
std::string side_name(LossSide s);
LossSide parse_side(const std::string& s);

struct LossRecord {
  WidthVector width;
  double loss = 0.0;
  LossSide side = LossSide::Both;
  int64_t step = 0;
};

/// Bounded history of sampled widths and their training losses; the oldest
/// record is dropped once capacity is reached.
class LossLog {
 public:
  explicit LossLog(std::size_t capacity = 1 << 16);

  void push(LossRecord r);
  std::size_t size() const { return records_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<LossRecord>& records() const { return records_; }

  // The m retained records with the smallest loss (ties: earlier step first).
  std::vector<LossRecord> top(std::size_t m) const;

  void write_jsonl(const std::filesystem::path& file, const nlohmann::json& header) const;
  static LossLog read_jsonl(const std::filesystem::path& file, nlohmann::json* header = nullptr);

 private:
  std::size_t capacity_;
  std::deque<LossRecord> records_;
};

/// Weight-sharing network over a search space. Hidden layer i has
/// physical_width(principle, layer i) units.
struct Supernet {
  SearchSpace space;
  Principle principle;
  MiniNet net;

  static Supernet create(const SearchSpace& space, const Principle& principle, bool normalize, Rng& rng);
  // Wraps existing parameters; throws if their shapes do not fit.
  static Supernet wrap(const SearchSpace& space, const Principle& principle, MiniNet net);

  Path path(const WidthVector& c, Side side) const;
  std::vector<IndexAssignment> assignments(const WidthVector& c) const;
};

// Sides trained on batch `batch_number` (1-based, global across epochs).
std::vector<Side> sides_for_batch(const Principle& p, UpdateMode mode, int64_t batch_number);

struct BatchGradient {
  Gradients grads;
  std::vector<double> losses;  // per width, averaged over the trained sides
  std::size_t peak_activations = 0;
};

// Gradient of mean_w mean_side L(w, side). All sides of one width are
// forwarded before any backward pass, so their tapes are alive together.
BatchGradient batch_gradient(const Supernet& sn, const Batch& batch, std::span<const WidthVector> widths,
                             std::span<const Side> sides);

struct TrainResult {
  LossLog log;
  // Per hidden layer and physical channel: number of trained paths that used it.
  std::vector<std::vector<int64_t>> channel_counts;
  std::size_t peak_activations = 0;
  int64_t steps = 0;
  double last_epoch_loss = 0.0;
};

TrainResult train_supernet(Supernet& sn, const TrainConfig& cfg, const Batch& train);

}  // namespace widthsearch
