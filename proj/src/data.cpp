#include "widthsearch/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace widthsearch {

using nlohmann::json;

std::string generator_name(Generator g) {
  return g == Generator::GaussianBlobs ? "gaussian_blobs" : "two_spirals";
}

Generator parse_generator(const std::string& name) {
  if (name == "gaussian_blobs") return Generator::GaussianBlobs;
  if (name == "two_spirals") return Generator::TwoSpirals;
  throw Error("unknown dataset generator '" + name + "'");
}

json DatasetConfig::to_json() const {
  return {{"seed", seed},
          {"n_train", n_train},
          {"n_val", n_val},
          {"generator", generator_name(generator)},
          {"num_classes", num_classes},
          {"input_dim", input_dim},
          {"noise", noise}};
}

DatasetConfig DatasetConfig::from_json(const json& j) {
  DatasetConfig c;
  c.seed = j.value("seed", c.seed);
  c.n_train = j.value("n_train", c.n_train);
  c.n_val = j.value("n_val", c.n_val);
  c.generator = parse_generator(j.value("generator", generator_name(c.generator)));
  c.num_classes = j.value("num_classes", c.num_classes);
  c.input_dim = j.value("input_dim", c.input_dim);
  c.noise = j.value("noise", c.noise);
  return c;
}

SynthDataset make_dataset(const DatasetConfig& cfg) {
  if (cfg.n_train <= 0 || cfg.n_val <= 0) throw Error("dataset sizes must be positive");
  if (cfg.num_classes < 2) throw Error("need at least two classes");
  if (cfg.input_dim < 1) throw Error("input_dim must be positive");
  if (cfg.generator == Generator::TwoSpirals && cfg.input_dim < 2) throw Error("spirals need input_dim >= 2");

  Rng rng = substream(cfg.seed, "dataset");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int total = cfg.n_train + cfg.n_val;
  const int dim = cfg.input_dim;

  // Class centres (blobs) or a random orthonormal-ish lift of the plane (spirals).
  Matrix centres(cfg.num_classes, dim);
  for (double& v : centres.data) v = 2.5 * gauss(rng);
  Matrix lift(2, dim);
  for (double& v : lift.data) v = gauss(rng);
  for (int r = 0; r < 2 && dim >= 2; ++r) {
    // Gram-Schmidt so the spiral plane is not squashed.
    if (r == 1) {
      double dot = 0.0;
      for (int c = 0; c < dim; ++c) dot += lift(0, c) * lift(1, c);
      for (int c = 0; c < dim; ++c) lift(1, c) -= dot * lift(0, c);
    }
    double norm = 0.0;
    for (int c = 0; c < dim; ++c) norm += lift(r, c) * lift(r, c);
    norm = std::sqrt(norm);
    for (int c = 0; c < dim; ++c) lift(r, c) /= norm;
  }

  Batch all;
  all.x = Matrix(total, dim);
  all.y.resize(static_cast<std::size_t>(total));
  for (int s = 0; s < total; ++s) {
    const int label = s % cfg.num_classes;
    all.y[static_cast<std::size_t>(s)] = label;
    double* row = all.x.row(s);
    if (cfg.generator == Generator::GaussianBlobs) {
      for (int c = 0; c < dim; ++c) row[c] = centres(label, c) + cfg.noise * gauss(rng);
    } else {
      const double t = unit(rng);
      const double radius = 0.5 + 4.0 * t;
      const double angle = 3.0 * std::numbers::pi * t + 2.0 * std::numbers::pi * label / cfg.num_classes;
      const double px = radius * std::cos(angle) + 0.15 * cfg.noise * gauss(rng);
      const double py = radius * std::sin(angle) + 0.15 * cfg.noise * gauss(rng);
      for (int c = 0; c < dim; ++c) row[c] = px * lift(0, c) + py * lift(1, c);
      for (int c = 0; c < dim; ++c) row[c] += (dim > 2 ? 0.1 * cfg.noise * gauss(rng) : 0.0);
    }
  }
  // Shuffle so that the class pattern does not align with the split.
  std::vector<int> order(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);

  SynthDataset ds;
  ds.train = gather(all, std::span<const int>(order).subspan(0, static_cast<std::size_t>(cfg.n_train)));
  ds.val = gather(all, std::span<const int>(order).subspan(static_cast<std::size_t>(cfg.n_train)));
  return ds;
}

Batch gather(const Batch& source, std::span<const int> rows) {
  Batch b;
  b.x = Matrix(static_cast<int>(rows.size()), source.x.cols);
  b.y.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int src = rows[r];
    std::copy_n(source.x.row(src), source.x.cols, b.x.row(static_cast<int>(r)));
    b.y[r] = source.y[static_cast<std::size_t>(src)];
  }
  return b;
}

}  // namespace widthsearch
