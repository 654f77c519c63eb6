#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "widthsearch/data.hpp"
#include "widthsearch/supertrain.hpp"

namespace widthsearch {

struct EvalReport {
  WidthVector width;
  double acc_left = 0.0;
  std::optional<double> acc_right;  // absent for ua supernets
  double acc_mean = 0.0;
  int64_t flops = 0;
  double loss_mean = 0.0;

  nlohmann::json to_json() const;
};

// Strict ranking order: higher acc_mean, then lower loss_mean, then lower
// FLOPs, then lexicographically smaller width.
bool ranks_before(const EvalReport& a, const EvalReport& b);

// Fraction of rows whose arg-max logit (lowest index on ties) is the label.
double accuracy(const MiniNet& net, const Batch& data, const Path& path, double* mean_loss = nullptr);

// Bilateral score of width c: mean of the left and right path accuracies on
// the whole validation set.
EvalReport evaluate(const Supernet& sn, const WidthVector& c, const Batch& val, const FlopsTable& table);

using Evaluator = std::function<EvalReport(const WidthVector&)>;

// The returned evaluator references its arguments; they must outlive it.
Evaluator supernet_evaluator(const Supernet& sn, const Batch& val, const FlopsTable& table);

// Parallel map in input order.
std::vector<EvalReport> evaluate_many(const Evaluator& eval, std::span<const WidthVector> widths);

// Trains the standalone network of width c from a fresh initialization and
// returns its validation accuracy.
double retrain_from_scratch(const SearchSpace& space, const WidthVector& c, const TrainConfig& cfg,
                            const SynthDataset& data);

}  // namespace widthsearch
