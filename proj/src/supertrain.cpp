#include "widthsearch/supertrain.hpp"

#include "widthsearch/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace widthsearch {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw Error("epochs must be >= 1");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (!(lr0 >= 0.0) || !(lr_min >= 0.0)) throw Error("learning rates must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must lie in [0, 1)");
  if (update_mode == UpdateMode::Iterative && !principle.bilateral()) {
    throw Error("iterative updating needs a bilateral principle (bc or bcv2)");
  }
  if (losslog_capacity < 1) throw Error("losslog_capacity must be positive");
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr0", lr0},
          {"lr_min", lr_min},
          {"momentum", momentum},
          {"seed", seed},
          {"principle", principle.name()},
          {"overlap", principle.overlap_name()},
          {"complementary", complementary},
          {"update_mode", update_mode == UpdateMode::BothPaths ? "both" : "iterative"},
          {"separate_complement_updates", separate_complement_updates},
          {"normalize", normalize},
          {"losslog_capacity", losslog_capacity}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr0 = j.value("lr0", c.lr0);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.momentum = j.value("momentum", c.momentum);
  c.seed = j.value("seed", c.seed);
  c.principle = Principle::parse(j.value("principle", std::string("bc")), j.value("overlap", std::string("exact-fair")));
  c.complementary = j.value("complementary", c.complementary);
  const std::string mode = j.value("update_mode", std::string("both"));
  if (mode == "both") {
    c.update_mode = UpdateMode::BothPaths;
  } else if (mode == "iterative") {
    c.update_mode = UpdateMode::Iterative;
  } else {
    throw Error("unknown update_mode '" + mode + "'");
  }
  c.separate_complement_updates = j.value("separate_complement_updates", c.separate_complement_updates);
  c.normalize = j.value("normalize", c.normalize);
  c.losslog_capacity = j.value("losslog_capacity", c.losslog_capacity);
  return c;
}

double cosine_lr(const TrainConfig& cfg, int64_t step, int64_t total_steps) {
  if (total_steps <= 1) return cfg.lr0;
  const double progress = static_cast<double>(step - 1) / static_cast<double>(total_steps);
  return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string side_name(LossSide s) {
  switch (s) {
    case LossSide::Left: return "left";
    case LossSide::Right: return "right";
    case LossSide::Both: return "both";
  }
  return "?";
}

LossSide parse_side(const std::string& s) {
  if (s == "left") return LossSide::Left;
  if (s == "right") return LossSide::Right;
  if (s == "both") return LossSide::Both;
  throw Error("unknown loss side '" + s + "'");
}

LossLog::LossLog(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw Error("loss log capacity must be positive");
}

void LossLog::push(LossRecord r) {
  if (records_.size() == capacity_) records_.pop_front();
  records_.push_back(std::move(r));
}

std::vector<LossRecord> LossLog::top(std::size_t m) const {
  std::vector<LossRecord> all(records_.begin(), records_.end());
  auto less = [](const LossRecord& a, const LossRecord& b) {
    if (a.loss != b.loss) return a.loss < b.loss;
    return a.step < b.step;
  };
  m = std::min(m, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m), all.end(), less);
  all.resize(m);
  return all;
}

void LossLog::write_jsonl(const std::filesystem::path& file, const json& header) const {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw Error("cannot write " + file.string());
  json h = header;
  h["type"] = "header";
  h["capacity"] = capacity_;
  os << h.dump() << '\n';
  for (const auto& r : records_) {
    os << json{{"width", r.width.widths}, {"loss", r.loss}, {"side", side_name(r.side)}, {"step", r.step}}.dump()
       << '\n';
  }
}

LossLog LossLog::read_jsonl(const std::filesystem::path& file, json* header) {
  std::ifstream is(file);
  if (!is) throw Error("cannot open " + file.string());
  std::string line;
  if (!std::getline(is, line)) throw Error(file.string() + " is empty");
  json h = json::parse(line);
  if (h.value("type", "") != "header") throw Error(file.string() + ": first line must be the header object");
  LossLog log(h.value("capacity", std::size_t{1} << 16));
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json r = json::parse(line);
    log.push({width_from_json(r.at("width")), r.at("loss").get<double>(), parse_side(r.at("side").get<std::string>()),
              r.at("step").get<int64_t>()});
  }
  if (header) *header = h;
  return log;
}

Supernet Supernet::create(const SearchSpace& space, const Principle& principle, bool normalize, Rng& rng) {
  std::vector<int> dims{space.input_dim()};
  for (const auto& l : space.layers()) dims.push_back(physical_width(principle, l));
  dims.push_back(space.output_dim());
  return Supernet{space, principle, make_mininet(dims, normalize, rng)};
}

Supernet Supernet::wrap(const SearchSpace& space, const Principle& principle, MiniNet net) {
  if (net.layers.size() != space.num_layers() + 1) throw Error("network depth does not match the search space");
  for (std::size_t k = 0; k <= space.num_layers(); ++k) {
    const int in = k == 0 ? space.input_dim() : physical_width(principle, space.layer(k - 1));
    const int out = k == space.num_layers() ? space.output_dim() : physical_width(principle, space.layer(k));
    if (net.layers[k].in_dim() != in || net.layers[k].out_dim() != out) {
      throw Error("network layer " + std::to_string(k) + " does not match the space under principle " +
                  principle.name());
    }
  }
  return Supernet{space, principle, std::move(net)};
}

std::vector<IndexAssignment> Supernet::assignments(const WidthVector& c) const {
  space.validate(c);
  std::vector<IndexAssignment> out;
  for (std::size_t i = 0; i < c.size(); ++i) out.push_back(indices(principle, space.layer(i), c[i]));
  return out;
}

Path Supernet::path(const WidthVector& c, Side side) const {
  if (side == Side::Right && !principle.bilateral()) throw Error("the ua principle has no right path");
  const auto a = assignments(c);
  Path p;
  int in_offset = 0;
  int in_count = space.input_dim();
  for (std::size_t k = 0; k <= a.size(); ++k) {
    int out_offset = 0;
    int out_count = space.output_dim();
    if (k < a.size()) {
      const auto& iv = a[k].side(side);
      out_offset = iv.first - 1;
      out_count = iv.size();
    }
    p.push_back({in_offset, in_count, out_offset, out_count});
    in_offset = out_offset;
    in_count = out_count;
  }
  return p;
}

std::vector<Side> sides_for_batch(const Principle& p, UpdateMode mode, int64_t batch_number) {
  if (!p.bilateral()) return {Side::Left};
  if (mode == UpdateMode::BothPaths) return {Side::Left, Side::Right};
  return {batch_number % 2 == 1 ? Side::Left : Side::Right};
}

BatchGradient batch_gradient(const Supernet& sn, const Batch& batch, std::span<const WidthVector> widths,
                             std::span<const Side> sides) {
  BatchGradient out;
  out.grads = Gradients::zeros_like(sn.net);
  const double scale = 1.0 / static_cast<double>(widths.size() * sides.size());
  for (const auto& c : widths) {
    std::vector<Path> paths;
    std::vector<ForwardResult> results;
    std::size_t live = 0;
    double loss = 0.0;
    for (Side s : sides) {
      paths.push_back(sn.path(c, s));
      results.push_back(forward(sn.net, batch, paths.back()));
      live += activation_elements(results.back().tape);
      loss += results.back().loss;
    }
    out.peak_activations = std::max(out.peak_activations, live);
    for (std::size_t i = 0; i < sides.size(); ++i) backward(sn.net, results[i].tape, paths[i], scale, out.grads);
    out.losses.push_back(loss / static_cast<double>(sides.size()));
  }
  return out;
}

TrainResult train_supernet(Supernet& sn, const TrainConfig& cfg, const Batch& train) {
  cfg.validate();
  if (sn.principle != cfg.principle) throw Error("supernet principle does not match the training config");
  if (train.size() == 0) throw Error("empty training set");

  TrainResult result{LossLog(cfg.losslog_capacity), {}, 0, 0, 0.0};
  for (const auto& l : sn.space.layers()) {
    result.channel_counts.emplace_back(static_cast<std::size_t>(physical_width(sn.principle, l)), 0);
  }

  Rng order_rng = substream(cfg.seed, "train/order");
  Rng width_rng = substream(cfg.seed, "train/width");
  SgdState opt = SgdState::zeros_like(sn.net);

  const int n = train.size();
  const int per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total = static_cast<int64_t>(per_epoch) * cfg.epochs;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0.0;
    for (int b = 0; b < per_epoch; ++b) {
      ++step;
      const int lo = b * cfg.batch_size;
      const int hi = std::min(n, lo + cfg.batch_size);
      const Batch batch = gather(train, std::span<const int>(order).subspan(static_cast<std::size_t>(lo),
                                                                             static_cast<std::size_t>(hi - lo)));
      std::vector<WidthVector> widths{sample_uniform(sn.space, width_rng)};
      if (cfg.complementary) widths.push_back(complement(widths.front(), sn.space));
      const auto sides = sides_for_batch(sn.principle, cfg.update_mode, step);
      const double lr = cosine_lr(cfg, step, total);

      std::vector<double> losses;
      if (cfg.separate_complement_updates) {
        for (const auto& c : widths) {
          auto g = batch_gradient(sn, batch, std::span<const WidthVector>(&c, 1), sides);
          if (!std::isfinite(g.losses.front())) {
            throw Error("training diverged at step " + std::to_string(step) + " on width " + c.str());
          }
          result.peak_activations = std::max(result.peak_activations, g.peak_activations);
          sgd_step(sn.net, g.grads, lr, cfg.momentum, opt);
          losses.push_back(g.losses.front());
        }
      } else {
        auto g = batch_gradient(sn, batch, widths, sides);
        for (std::size_t i = 0; i < widths.size(); ++i) {
          if (!std::isfinite(g.losses[i])) {
            throw Error("training diverged at step " + std::to_string(step) + " on width " + widths[i].str());
          }
        }
        result.peak_activations = std::max(result.peak_activations, g.peak_activations);
        sgd_step(sn.net, g.grads, lr, cfg.momentum, opt);
        losses = g.losses;
      }

      const LossSide tag = sides.size() == 2 ? LossSide::Both : (sides.front() == Side::Left ? LossSide::Left : LossSide::Right);
      for (std::size_t i = 0; i < widths.size(); ++i) {
        result.log.push({widths[i], losses[i], tag, step});
        epoch_loss += losses[i] / static_cast<double>(widths.size());
        for (Side s : sides) {
          for (std::size_t layer = 0; layer < widths[i].size(); ++layer) {
            const auto iv = indices(sn.principle, sn.space.layer(layer), widths[i][layer]).side(s);
            auto& counts = result.channel_counts[layer];
            for (int ch = iv.first; ch <= iv.last; ++ch) ++counts[static_cast<std::size_t>(ch - 1)];
          }
        }
      }
    }
    result.last_epoch_loss = epoch_loss / per_epoch;
  }
  result.steps = step;
  return result;
}

}  // namespace widthsearch
