#include "widthsearch/eval.hpp"

#include <cmath>

namespace widthsearch {

using nlohmann::json;

json EvalReport::to_json() const {
  json j{{"width", width.widths}, {"acc_left", acc_left}, {"acc_mean", acc_mean}, {"flops", flops},
         {"loss_mean", loss_mean}};
  j["acc_right"] = acc_right ? json(*acc_right) : json(nullptr);
  return j;
}

bool ranks_before(const EvalReport& a, const EvalReport& b) {
  if (a.acc_mean != b.acc_mean) return a.acc_mean > b.acc_mean;
  if (a.loss_mean != b.loss_mean) return a.loss_mean < b.loss_mean;
  if (a.flops != b.flops) return a.flops < b.flops;
  return a.width < b.width;
}

double accuracy(const MiniNet& net, const Batch& data, const Path& path, double* mean_loss) {
  const auto r = forward(net, data, path);
  int correct = 0;
  for (int b = 0; b < data.size(); ++b) {
    const double* row = r.logits.row(b);
    int best = 0;
    for (int j = 1; j < r.logits.cols; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (best == data.y[static_cast<std::size_t>(b)]) ++correct;
  }
  if (mean_loss) *mean_loss = r.loss;
  return static_cast<double>(correct) / data.size();
}

EvalReport evaluate(const Supernet& sn, const WidthVector& c, const Batch& val, const FlopsTable& table) {
  sn.space.validate(c);
  EvalReport rep;
  rep.width = c;
  rep.flops = table.total(c);
  double loss_left = 0.0;
  rep.acc_left = accuracy(sn.net, val, sn.path(c, Side::Left), &loss_left);
  if (sn.principle.bilateral()) {
    double loss_right = 0.0;
    rep.acc_right = accuracy(sn.net, val, sn.path(c, Side::Right), &loss_right);
    rep.acc_mean = (rep.acc_left + *rep.acc_right) / 2.0;
    rep.loss_mean = (loss_left + loss_right) / 2.0;
  } else {
    rep.acc_mean = rep.acc_left;
    rep.loss_mean = loss_left;
  }
  return rep;
}

Evaluator supernet_evaluator(const Supernet& sn, const Batch& val, const FlopsTable& table) {
  return [&sn, &val, &table](const WidthVector& c) { return evaluate(sn, c, val, table); };
}

std::vector<EvalReport> evaluate_many(const Evaluator& eval, std::span<const WidthVector> widths) {
  std::vector<EvalReport> out(widths.size());
  parallel_for(widths.size(), [&](std::size_t i) { out[i] = eval(widths[i]); });
  return out;
}

double retrain_from_scratch(const SearchSpace& space, const WidthVector& c, const TrainConfig& cfg,
                            const SynthDataset& data) {
  space.validate(c);
  std::vector<LayerSpec> fixed;
  for (int w : c.widths) fixed.push_back({w, 0, 1, std::nullopt});
  const SearchSpace single(fixed, space.input_dim(), space.output_dim());

  TrainConfig plain = cfg;
  plain.principle = Principle{PrincipleKind::UA, OverlapMode::ExactFair};
  plain.complementary = false;
  plain.update_mode = UpdateMode::BothPaths;
  plain.separate_complement_updates = false;
  plain.losslog_capacity = 1;

  Rng init = substream(cfg.seed, "retrain/init");
  Supernet sn = Supernet::create(single, plain.principle, plain.normalize, init);
  train_supernet(sn, plain, data.train);
  return accuracy(sn.net, data.val, sn.path(c, Side::Left));
}

}  // namespace widthsearch
