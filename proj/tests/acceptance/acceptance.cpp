// Acceptance harness: one PASS/FAIL line per criterion.
//   acceptance                 run all criteria
//   acceptance --criterion 4   run one

#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "widthsearch/assign.hpp"
#include "widthsearch/bench.hpp"
#include "widthsearch/data.hpp"
#include "widthsearch/eval.hpp"
#include "widthsearch/evo.hpp"
#include "widthsearch/net.hpp"
#include "widthsearch/pipeline.hpp"
#include "widthsearch/prior.hpp"
#include "widthsearch/space.hpp"
#include "widthsearch/supertrain.hpp"

using namespace widthsearch;
namespace fs = std::filesystem;

namespace {

constexpr uint64_t kSeed = 20240613;

// Pinned tolerances and limits.
constexpr double kC1Seconds = 1.0;
constexpr double kC2Seconds = 5.0;
constexpr int kC3Samples = 10'000;
constexpr int kC4Batches = 10'000;
constexpr double kC4Seconds = 30.0;
constexpr double kC5GradTol = 1e-4;
constexpr int kC6Batches = 10'000;
constexpr double kC6StdErrors = 2.0;
constexpr double kC6MemoryRatio = 0.55;
constexpr double kC7ObjectiveTol = 1e-3;
constexpr double kC7GridStep = 0.05;
constexpr double kC7SimplexTol = 1e-9;
constexpr double kC7FlopsSlack = 1.001;
constexpr double kC7MonotoneTol = 1e-9;
constexpr double kC7Seconds = 60.0;
constexpr int kC8Seeds = 10;
constexpr int kC8MinHits = 9;
constexpr double kC8TopFraction = 0.01;
constexpr double kC8Seconds = 120.0;
constexpr int kC9SupernetSeeds = 5;
constexpr double kC9Seconds = 600.0;
constexpr int kC10Trials = 1000;
constexpr double kC10Tol = 1e-12;

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Records the first failure and keeps a short summary.
class Verdict {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok && pass_) {
      pass_ = false;
      first_failure_ = what;
    }
  }
  void note(const std::string& s) {
    if (!notes_.empty()) notes_ += "; ";
    notes_ += s;
  }
  Outcome done() const {
    Outcome o;
    o.pass = pass_;
    o.detail = notes_;
    if (!pass_) o.detail = "first failure: " + first_failure_ + (notes_.empty() ? "" : "; " + notes_);
    return o;
  }

 private:
  bool pass_ = true;
  std::string first_failure_;
  std::string notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

LayerSpec layer(int max_width, int base_width, int grid_count) {
  return {max_width, base_width, grid_count, std::nullopt};
}

std::vector<int> range_widths(int lo, int hi) {
  std::vector<int> w(static_cast<std::size_t>(hi - lo + 1));
  std::iota(w.begin(), w.end(), lo);
  return w;
}

// ---------------------------------------------------------------- 1
Outcome cardinality_exactness() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const Principle ua{PrincipleKind::UA, OverlapMode::ExactFair};
  const Principle bc{PrincipleKind::BC, OverlapMode::ExactFair};
  for (int l = 2; l <= 64; ++l) {
    const LayerSpec layer{l, 0, l, std::nullopt};
    const auto widths = range_widths(1, l);
    const auto a = cardinality_audit(ua, layer, widths);
    const auto b = cardinality_audit(bc, layer, widths);
    v.require(static_cast<int>(a.size()) == l && static_cast<int>(b.size()) == l, "audit length at l=" + std::to_string(l));
    for (int c = 1; c <= l && c <= static_cast<int>(a.size()); ++c) {
      v.require(a[c - 1] == l - c + 1, "UA l=" + std::to_string(l) + " c=" + std::to_string(c));
      v.require(b[c - 1] == l + 1, "BC l=" + std::to_string(l) + " c=" + std::to_string(c));
    }
  }
  const auto six = cardinality_audit(bc, LayerSpec{6, 0, 6, std::nullopt}, range_widths(1, 6));
  v.require(std::all_of(six.begin(), six.end(), [](int64_t x) { return x == 7; }), "constant 7 at l=6");
  const double secs = seconds_since(t0);
  v.require(secs < kC1Seconds, "runtime " + fmt("%.3fs", secs));
  v.note("l=2..64 exact, l=6 gives 7 everywhere, " + fmt("%.3fs", secs));
  return v.done();
}

// ---------------------------------------------------------------- 2
Outcome bcv2_cardinality() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const Principle fair{PrincipleKind::BCv2, OverlapMode::ExactFair};
  const Principle literal{PrincipleKind::BCv2, OverlapMode::PaperLiteral};
  int pairs = 0;
  int deviating = 0;
  for (int l = 2; l <= 64; ++l) {
    for (int ls = 1; ls < l; ++ls) {
      ++pairs;
      const LayerSpec layer{l, ls, l - ls + 1, std::nullopt};
      const auto widths = range_widths(ls, l);
      const std::string at = " l=" + std::to_string(l) + " l_s=" + std::to_string(ls);

      const auto a = cardinality_audit(fair, layer, widths);
      v.require(static_cast<int>(a.size()) == l + ls, "exact_fair physical width" + at);
      for (int64_t x : a) v.require(x == l + 1 - ls, "exact_fair count" + at);

      // Channels [l_s, l] are shared by both sides; the rest are base channels.
      const auto p = cardinality_audit(literal, layer, widths);
      v.require(static_cast<int>(p.size()) == l + ls - 1, "paper_literal physical width" + at);
      bool any_base = false;
      for (int ch = 1; ch <= static_cast<int>(p.size()); ++ch) {
        const bool shared = ch >= ls && ch <= l;
        const int64_t want = shared ? l - ls + 2 : l - ls + 1;
        any_base = any_base || !shared;
        v.require(p[ch - 1] == want, "paper_literal channel " + std::to_string(ch) + at);
      }
      if (any_base) ++deviating;
    }
  }
  const double secs = seconds_since(t0);
  v.require(secs < kC2Seconds, "runtime " + fmt("%.3fs", secs));
  v.note(std::to_string(pairs) + " (l, l_s) pairs exact; paper_literal base channels one below shared channels in " +
         std::to_string(deviating) + " pairs, " + fmt("%.3fs", secs));
  return v.done();
}

// ---------------------------------------------------------------- 3
Outcome complement_example() {
  Verdict v;
  const SearchSpace six({layer(6, 0, 6), layer(6, 0, 6), layer(6, 0, 6)}, 3, 2);
  const auto c = complement(WidthVector({3, 2, 4}), six);
  v.require(c == WidthVector({3, 4, 2}), "complement(3,2,4) = " + c.str());

  const SearchSpace mixed({layer(6, 0, 6), layer(6, 2, 5), layer(12, 4, 3), layer(16, 0, 4), layer(9, 3, 3)}, 4, 3);
  Rng rng = substream(kSeed, "c3");
  int checked = 0;
  for (int i = 0; i < kC3Samples; ++i) {
    const auto w = sample_uniform(mixed, rng);
    const auto wc = complement(w, mixed);
    v.require(mixed.contains(wc), "complement leaves the space at " + w.str());
    v.require(complement(wc, mixed) == w, "involution fails at " + w.str());
    ++checked;
  }
  v.note("(3,2,4) -> " + c.str() + ", involution on " + std::to_string(checked) + " random widths");
  return v.done();
}

// ---------------------------------------------------------------- 4
Outcome fairness_counters() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const SearchSpace sp({layer(8, 0, 8), layer(12, 0, 12), layer(6, 0, 6)}, 2, 4);
  DatasetConfig dc;
  dc.seed = derive_seed(kSeed, "c4/data");
  dc.n_train = 320;
  dc.n_val = 32;
  const auto data = make_dataset(dc);

  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.epochs = kC4Batches / (dc.n_train / cfg.batch_size);
  cfg.lr0 = 0.02;
  cfg.seed = derive_seed(kSeed, "c4/train");
  cfg.principle = Principle{PrincipleKind::BC, OverlapMode::ExactFair};
  cfg.complementary = true;
  cfg.losslog_capacity = 16;

  Rng init = substream(kSeed, "c4/init");
  auto bc = Supernet::create(sp, cfg.principle, false, init);
  const auto rb = train_supernet(bc, cfg, data.train);
  v.require(rb.steps == kC4Batches, "BC steps " + std::to_string(rb.steps));
  for (std::size_t l = 0; l < rb.channel_counts.size(); ++l) {
    const auto& counts = rb.channel_counts[l];
    v.require(!counts.empty() && counts.front() > 0, "BC layer " + std::to_string(l) + " untouched");
    for (int64_t x : counts) v.require(x == counts.front(), "BC layer " + std::to_string(l) + " unequal counts");
  }

  TrainConfig ucfg = cfg;
  ucfg.principle = Principle{PrincipleKind::UA, OverlapMode::ExactFair};
  ucfg.complementary = false;
  Rng uinit = substream(kSeed, "c4/init-ua");
  auto ua = Supernet::create(sp, ucfg.principle, false, uinit);
  const auto ru = train_supernet(ua, ucfg, data.train);
  for (std::size_t l = 0; l < ru.channel_counts.size(); ++l) {
    const auto& counts = ru.channel_counts[l];
    for (std::size_t ch = 1; ch < counts.size(); ++ch) {
      v.require(counts[ch] < counts[ch - 1], "UA layer " + std::to_string(l) + " not strictly decreasing at channel " +
                                                 std::to_string(ch + 1));
    }
  }
  const double secs = seconds_since(t0);
  v.require(secs < kC4Seconds, "runtime " + fmt("%.1fs", secs));
  v.note(std::to_string(rb.steps) + " BC batch pairs, per-channel count " +
         std::to_string(rb.channel_counts.front().front()) + " in every layer; UA strictly decreasing; " +
         fmt("%.1fs", secs));
  return v.done();
}

// ---------------------------------------------------------------- 5
Outcome gradient_correctness() {
  Verdict v;
  const SearchSpace sp({layer(8, 0, 4), layer(12, 0, 4), layer(6, 0, 3)}, 3, 4);
  DatasetConfig dc;
  dc.seed = derive_seed(kSeed, "c5/data");
  dc.n_train = 24;
  dc.n_val = 8;
  dc.input_dim = 3;
  const auto data = make_dataset(dc);

  double worst = 0.0;
  for (bool normalize : {false, true}) {
    Rng init = substream(kSeed, normalize ? "c5/init-bn" : "c5/init");
    auto sn = Supernet::create(sp, Principle{PrincipleKind::BC, OverlapMode::ExactFair}, normalize, init);
    // Zero biases put pre-activations exactly on the ReLU kink whenever a
    // whole layer is dead for a sample; central differences are meaningless there.
    std::uniform_real_distribution<double> bias(-0.5, 0.5);
    for (auto& layer : sn.net.layers) {
      for (double& b : layer.bias) b = bias(init);
    }
    for (const auto& w : {WidthVector({4, 6, 4}), WidthVector({8, 12, 6}), WidthVector({2, 9, 2})}) {
      for (Side s : {Side::Left, Side::Right}) {
        const double err = grad_check(sn.net, data.train, sn.path(w, s));
        worst = std::max(worst, err);
        v.require(err < kC5GradTol, "grad_check " + w.str() + fmt(" rel err %.2e", err));
      }
    }
  }

  // Slice locality: one SGD step on a right-side path, then diff every parameter.
  Rng init = substream(kSeed, "c5/locality");
  auto sn = Supernet::create(sp, Principle{PrincipleKind::BC, OverlapMode::ExactFair}, false, init);
  const MiniNet before = sn.net;
  const WidthVector w({4, 6, 4});
  const Path path = sn.path(w, Side::Right);
  const std::array<Side, 1> sides{Side::Right};
  const std::array<WidthVector, 1> widths{w};
  const auto g = batch_gradient(sn, data.train, widths, sides);
  auto state = SgdState::zeros_like(sn.net);
  sgd_step(sn.net, g.grads, 0.5, 0.9, state);

  int64_t changed_inside = 0;
  int64_t changed_outside = 0;
  for (std::size_t k = 0; k < sn.net.layers.size(); ++k) {
    const auto& a = before.layers[k];
    const auto& b = sn.net.layers[k];
    const auto& s = path[k];
    for (int r = 0; r < a.weight.rows; ++r) {
      const bool row_in = r >= s.out_offset && r < s.out_offset + s.out_count;
      for (int c = 0; c < a.weight.cols; ++c) {
        const bool in = row_in && c >= s.in_offset && c < s.in_offset + s.in_count;
        if (a.weight(r, c) != b.weight(r, c)) ++(in ? changed_inside : changed_outside);
      }
      if (a.bias[r] != b.bias[r]) ++(row_in ? changed_inside : changed_outside);
    }
  }
  v.require(changed_outside == 0, std::to_string(changed_outside) + " parameters changed outside the slice");
  v.require(changed_inside > 0, "step changed nothing");
  v.note(fmt("max rel err %.2e", worst) + ", " + std::to_string(changed_inside) +
         " entries changed inside the slice, 0 outside");
  return v.done();
}

// ---------------------------------------------------------------- 6
// Flattened parameter blocks: weight and bias of every layer.
std::vector<std::vector<double>> flatten(const Gradients& g) {
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < g.weight.size(); ++k) {
    out.push_back(g.weight[k].data);
    out.push_back(g.bias[k]);
  }
  return out;
}

Outcome iterative_equivalence() {
  Verdict v;
  const SearchSpace sp({layer(8, 0, 4), layer(8, 0, 4), layer(8, 0, 4)}, 2, 4);
  const Principle bc{PrincipleKind::BC, OverlapMode::ExactFair};
  DatasetConfig dc;
  dc.seed = derive_seed(kSeed, "c6/data");
  dc.n_train = 512;
  dc.n_val = 64;
  const auto data = make_dataset(dc);

  // Frozen state, momentum 0: the per-batch update is the gradient itself.
  // Each batch and width pair is shared by both modes, so the difference
  // d_t = g_iter(t) - g_both(t) has zero mean when odd and even batches balance.
  Rng init = substream(kSeed, "c6/init");
  const auto sn = Supernet::create(sp, bc, false, init);
  Rng rng = substream(kSeed, "c6/batches");
  std::uniform_int_distribution<int> row(0, dc.n_train - 1);
  const std::array<Side, 2> both{Side::Left, Side::Right};

  std::vector<std::vector<double>> sum;
  std::vector<std::vector<double>> sumsq;
  for (int64_t t = 1; t <= kC6Batches; ++t) {
    std::vector<int> rows(32);
    for (int& r : rows) r = row(rng);
    const Batch batch = gather(data.train, rows);
    const auto c = sample_uniform(sp, rng);
    const std::array<WidthVector, 2> widths{c, complement(c, sp)};
    const auto sides = sides_for_batch(bc, UpdateMode::Iterative, t);
    const auto gb = flatten(batch_gradient(sn, batch, widths, both).grads);
    const auto gi = flatten(batch_gradient(sn, batch, widths, sides).grads);
    if (sum.empty()) {
      for (const auto& blk : gb) {
        sum.emplace_back(blk.size(), 0.0);
        sumsq.emplace_back(blk.size(), 0.0);
      }
    }
    for (std::size_t b = 0; b < gb.size(); ++b) {
      for (std::size_t i = 0; i < gb[b].size(); ++i) {
        const double d = gi[b][i] - gb[b][i];
        sum[b][i] += d;
        sumsq[b][i] += d * d;
      }
    }
  }

  // Per block: root-mean-square of mean(d)/SE(d) over its parameters.
  const double n = kC6Batches;
  double worst_rms = 0.0;
  for (std::size_t b = 0; b < sum.size(); ++b) {
    double z2 = 0.0;
    int m = 0;
    for (std::size_t i = 0; i < sum[b].size(); ++i) {
      const double mean = sum[b][i] / n;
      const double var = std::max(0.0, (sumsq[b][i] - n * mean * mean) / (n - 1.0));
      const double se = std::sqrt(var / n);
      if (se == 0.0) {
        v.require(mean == 0.0, "block " + std::to_string(b) + " constant nonzero difference");
        continue;
      }
      z2 += (mean / se) * (mean / se);
      ++m;
    }
    const double rms = m > 0 ? std::sqrt(z2 / m) : 0.0;
    worst_rms = std::max(worst_rms, rms);
    v.require(rms <= kC6StdErrors, "block " + std::to_string(b) + fmt(" rms z %.3f", rms));
  }

  // Peak activation memory of real training in both modes.
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.lr0 = 0.05;
  cfg.seed = derive_seed(kSeed, "c6/train");
  cfg.principle = bc;
  cfg.complementary = true;
  std::array<std::size_t, 2> peak{};
  for (int mode = 0; mode < 2; ++mode) {
    cfg.update_mode = mode == 0 ? UpdateMode::BothPaths : UpdateMode::Iterative;
    Rng r = substream(kSeed, "c6/train-init");
    auto net = Supernet::create(sp, bc, false, r);
    peak[mode] = train_supernet(net, cfg, data.train).peak_activations;
  }
  const double ratio = static_cast<double>(peak[1]) / static_cast<double>(peak[0]);
  v.require(ratio <= kC6MemoryRatio, fmt("memory ratio %.3f", ratio));
  v.note(std::to_string(kC6Batches) + " paired batches, worst block rms z " + fmt("%.3f", worst_rms) +
         ", peak activation ratio " + fmt("%.3f", ratio));
  return v.done();
}

// ---------------------------------------------------------------- 7
// FLOPs of all 27 widths, by direct recount of each dense layer.
std::array<double, 27> c7_width_flops(const SearchSpace& sp) {
  std::array<double, 27> f{};
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      for (int c = 0; c < 3; ++c) {
        const std::array<double, 5> dims{double(sp.input_dim()), double(sp.grid(0)[a]), double(sp.grid(1)[b]),
                                         double(sp.grid(2)[c]), double(sp.output_dim())};
        double total = 0.0;
        for (int k = 0; k < 4; ++k) total += 2.0 * dims[k] * dims[k + 1];
        f[a * 9 + b * 3 + c] = total;
      }
    }
  }
  return f;
}

double c7_flops(const std::array<std::array<double, 3>, 3>& p, const std::array<double, 27>& wf) {
  double f = 0.0;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      for (int c = 0; c < 3; ++c) f += p[0][a] * p[1][b] * p[2][c] * wf[a * 9 + b * 3 + c];
    }
  }
  return f;
}

// Exhaustive search over the product of three 3-point simplices at the grid step.
double c7_oracle(const std::array<std::array<double, 3>, 3>& e, const std::array<double, 27>& wf, int64_t budget) {
  const int n = static_cast<int>(std::lround(1.0 / kC7GridStep));
  std::vector<std::array<double, 3>> simplex;
  for (int a = 0; a <= n; ++a) {
    for (int b = 0; a + b <= n; ++b) simplex.push_back({a / double(n), b / double(n), (n - a - b) / double(n)});
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p0 : simplex) {
    for (const auto& p1 : simplex) {
      for (const auto& p2 : simplex) {
        double obj = 0.0;
        for (int i = 0; i < 3; ++i) obj += p0[i] * e[0][i] + p1[i] * e[1][i] + p2[i] * e[2][i];
        if (obj >= best) continue;
        if (c7_flops({p0, p1, p2}, wf) <= static_cast<double>(budget)) best = obj;
      }
    }
  }
  return best;
}

PotentialErrorTable c7_table(const std::array<std::array<double, 3>, 3>& e) {
  PotentialErrorTable t;
  for (const auto& row : e) {
    t.error.emplace_back(row.begin(), row.end());
    t.visits.push_back({1, 1, 1});
  }
  t.imputed = 1.0;
  return t;
}

Outcome prior_solver_quality() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const std::array<SearchSpace, 3> spaces{SearchSpace({layer(12, 0, 3), layer(12, 0, 3), layer(12, 0, 3)}, 3, 10),
                                          SearchSpace({layer(16, 4, 3), layer(24, 0, 3), layer(9, 3, 3)}, 8, 4),
                                          SearchSpace({layer(30, 0, 3), layer(6, 0, 3), layer(18, 6, 3)}, 5, 5)};
  Rng rng = substream(kSeed, "c7");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_gap = -std::numeric_limits<double>::infinity();
  double best_gap = std::numeric_limits<double>::infinity();
  int instances = 0;
  int sweeps = 0;

  for (const auto& sp : spaces) {
    const auto table = FlopsTable::dense(sp);
    const auto wf = c7_width_flops(sp);
    const double lo = static_cast<double>(table.total(sp.min_widths()));
    const double hi = static_cast<double>(table.total(sp.max_widths()));
    for (int draw = 0; draw < 2; ++draw) {
      // Errors fall with width, so the budget binds.
      std::array<std::array<double, 3>, 3> e{};
      for (auto& row : e) {
        row[0] = 0.5 + 0.5 * unit(rng);
        row[1] = row[0] - 0.3 * unit(rng);
        row[2] = row[1] - 0.3 * unit(rng);
      }
      const auto pet = c7_table(e);
      SolverConfig cfg;
      cfg.seed = derive_seed(kSeed, "c7/solver/" + std::to_string(instances));

      for (double frac : {0.25, 0.5, 0.75}) {
        const auto budget = static_cast<int64_t>(lo + frac * (hi - lo));
        const auto r = solve_distribution(pet, sp, table, budget, cfg);
        const double oracle = c7_oracle(e, wf, budget);
        const double gap = r.objective - oracle;
        worst_gap = std::max(worst_gap, gap);
        best_gap = std::min(best_gap, gap);
        v.require(gap <= kC7ObjectiveTol, "solver above oracle by " + fmt("%.2e", gap));
        ++instances;

        std::array<std::array<double, 3>, 3> p{};
        double obj = 0.0;
        for (int l = 0; l < 3; ++l) {
          double s = 0.0;
          for (int i = 0; i < 3; ++i) {
            p[l][i] = r.dist.probs[l][i];
            v.require(p[l][i] >= 0.0, "negative probability");
            s += p[l][i];
            obj += p[l][i] * e[l][i];
          }
          v.require(std::abs(s - 1.0) < kC7SimplexTol, fmt("simplex sum error %.2e", std::abs(s - 1.0)));
        }
        v.require(std::abs(obj - r.objective) < 1e-12, "reported objective disagrees with the distribution");
        v.require(c7_flops(p, wf) <= static_cast<double>(budget) * kC7FlopsSlack, "expected FLOPs over budget");
      }

      // Budget sweep: relaxing the budget never raises the objective.
      double prev = std::numeric_limits<double>::infinity();
      for (int k = 0; k <= 20; ++k) {
        const auto budget = static_cast<int64_t>(lo + (hi - lo) * k / 20.0);
        const double obj = solve_distribution(pet, sp, table, budget, cfg).objective;
        v.require(obj <= prev + kC7MonotoneTol, "sweep rises at step " + std::to_string(k) + fmt(" by %.2e", obj - prev));
        prev = obj;
      }
      ++sweeps;
    }
  }
  const double secs = seconds_since(t0);
  v.require(secs < kC7Seconds, "runtime " + fmt("%.1fs", secs));
  v.note(std::to_string(instances) + " instances, solver minus oracle in [" + fmt("%.2e", best_gap) + ", " +
         fmt("%.2e", worst_gap) + "], " + std::to_string(sweeps) + " monotone sweeps, " + fmt("%.1fs", secs));
  return v.done();
}

// ---------------------------------------------------------------- 8
Outcome search_effectiveness() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const SearchSpace sp({layer(32, 0, 4), layer(32, 0, 4), layer(32, 0, 4), layer(32, 0, 4), layer(32, 0, 4)}, 16, 10);
  const auto table = FlopsTable::dense(sp);
  const int64_t budget = resolve_budget("median", sp, table);
  const auto all = sp.enumerate();

  int hits = 0;
  double sum_greedy = 0.0;
  double sum_evo = 0.0;
  double sum_prior = 0.0;
  for (int s = 0; s < kC8Seeds; ++s) {
    const uint64_t root = derive_seed(kSeed, "c8/" + std::to_string(s));
    const SyntheticOracle oracle(sp, derive_seed(root, "oracle"));
    const auto eval = oracle.evaluator(table);

    std::vector<double> feasible;
    for (const auto& c : all) {
      if (table.total(c) <= budget) feasible.push_back(oracle.fitness(c));
    }
    std::sort(feasible.begin(), feasible.end(), std::greater<>());
    const auto top = static_cast<std::size_t>(std::ceil(kC8TopFraction * static_cast<double>(feasible.size())));
    const double threshold = feasible[top - 1];

    EvoConfig cfg;
    cfg.seed = derive_seed(root, "evo");
    Rng init_rng = substream(root, "init");
    const auto init = sample_feasible_uniform(sp, table, budget, static_cast<std::size_t>(cfg.population_size), init_rng);
    const auto evo = evolve(eval, sp, table, budget, cfg, init);

    Rng log_rng = substream(root, "losslog");
    const auto log = synthetic_loss_log(sp, oracle, 4096, 0.01, log_rng);
    const auto pet = build_error_table(log, sp, 100);
    SolverConfig scfg;
    scfg.seed = derive_seed(root, "solver");
    const auto dist = solve_distribution(pet, sp, table, budget, scfg).dist;
    Rng pop_rng = substream(root, "prior-pop");
    const auto prior_init =
        sample_population(dist, sp, table, budget, static_cast<std::size_t>(cfg.population_size), pop_rng);
    const auto prior = evolve(eval, sp, table, budget, cfg, prior_init);

    const auto greedy = greedy_slim(eval, sp, table, budget);

    for (const auto* r : {&evo, &prior, &greedy}) {
      v.require(table.total(r->best.width) <= budget, "infeasible result " + r->best.width.str());
    }
    const double fe = oracle.fitness(evo.best.width);
    if (fe >= threshold) ++hits;
    sum_evo += fe;
    sum_prior += oracle.fitness(prior.best.width);
    sum_greedy += oracle.fitness(greedy.best.width);
  }
  const double n = kC8Seeds;
  const double mg = sum_greedy / n;
  const double me = sum_evo / n;
  const double mp = sum_prior / n;
  v.require(hits >= kC8MinHits, "evo in top 1% for " + std::to_string(hits) + "/" + std::to_string(kC8Seeds) + " seeds");
  v.require(mg <= me, fmt("greedy mean %.6f", mg) + fmt(" above evo mean %.6f", me));
  v.require(me <= mp, fmt("evo mean %.6f", me) + fmt(" above prior-evo mean %.6f", mp));
  const double secs = seconds_since(t0);
  v.require(secs < kC8Seconds, "runtime " + fmt("%.1fs", secs));
  v.note("evo in top 1% for " + std::to_string(hits) + "/" + std::to_string(kC8Seeds) + " seeds; mean fitness greedy " +
         fmt("%.6f", mg) + ", evo " + fmt("%.6f", me) + ", prior-evo " + fmt("%.6f", mp) + ", " + fmt("%.1fs", secs));
  return v.done();
}

// ---------------------------------------------------------------- 9
Outcome ranking_fidelity() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const SearchSpace sp({layer(16, 0, 4), layer(16, 0, 4), layer(16, 0, 4)}, 2, 2);
  DatasetConfig dc;
  dc.seed = derive_seed(kSeed, "c9/data");
  dc.n_train = 1024;
  dc.n_val = 512;
  dc.generator = Generator::TwoSpirals;
  dc.num_classes = 2;
  dc.noise = 0.1;
  const auto data = make_dataset(dc);
  const auto flops = FlopsTable::dense(sp);

  TrainConfig retrain;
  retrain.epochs = 100;
  retrain.batch_size = 32;
  retrain.lr0 = 0.05;
  retrain.seed = derive_seed(kSeed, "c9/retrain");
  const auto bench = generate_benchmark(sp, retrain, dc, 3, "mlp");
  bench.validate();
  v.require(bench.records.size() == 64, "benchmark size " + std::to_string(bench.records.size()));

  double sum_bc = 0.0;
  double sum_ua = 0.0;
  std::string taus;
  for (int s = 0; s < kC9SupernetSeeds; ++s) {
    std::array<double, 2> tau{};
    for (int k = 0; k < 2; ++k) {
      TrainConfig cfg = retrain;
      cfg.seed = derive_seed(kSeed, "c9/supernet/" + std::to_string(s));
      cfg.principle = Principle{k == 0 ? PrincipleKind::BC : PrincipleKind::UA, OverlapMode::ExactFair};
      cfg.complementary = k == 0;
      Rng init = substream(cfg.seed, "init");
      auto sn = Supernet::create(sp, cfg.principle, false, init);
      train_supernet(sn, cfg, data.train);
      tau[k] = score_supernet(sn, bench, data.val, flops).kendall_tau;
    }
    v.require(tau[0] > 0.0, "BC tau " + fmt("%.3f", tau[0]) + " in seed " + std::to_string(s));
    sum_bc += tau[0];
    sum_ua += tau[1];
    taus += (s ? " " : "") + fmt("%.3f", tau[0]) + "/" + fmt("%.3f", tau[1]);
  }
  const double mb = sum_bc / kC9SupernetSeeds;
  const double mu = sum_ua / kC9SupernetSeeds;
  v.require(mb >= mu, fmt("mean BC tau %.3f", mb) + fmt(" below UA %.3f", mu));
  const double secs = seconds_since(t0);
  v.require(secs < kC9Seconds, "runtime " + fmt("%.1fs", secs));
  v.note(fmt("mean tau BC %.3f", mb) + fmt(" vs UA %.3f", mu) + " (per seed BC/UA: " + taus + "), " +
         fmt("%.1fs", secs));
  return v.done();
}

// ---------------------------------------------------------------- 10
double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> brute_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    int less = 0;
    int equal = 0;
    for (double o : x) {
      less += o < x[i];
      equal += o == x[i];
    }
    r[i] = less + (equal + 1) / 2.0;
  }
  return r;
}

double brute_kendall(const std::vector<double>& x, const std::vector<double>& y) {
  double concordant = 0.0;
  double discordant = 0.0;
  double tx = 0.0;
  double ty = 0.0;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = x[i] - x[j];
      const double b = y[i] - y[j];
      if (a == 0.0) tx += 1.0;
      if (b == 0.0) ty += 1.0;
      if (a * b > 0.0) concordant += 1.0;
      if (a * b < 0.0) discordant += 1.0;
    }
  }
  const double n0 = static_cast<double>(n * (n - 1) / 2);
  return (concordant - discordant) / std::sqrt((n0 - tx) * (n0 - ty));
}

Outcome correlation_oracles() {
  Verdict v;
  Rng rng = substream(kSeed, "c10");
  std::uniform_int_distribution<int> len(2, 12);
  std::uniform_int_distribution<int> small(0, 4);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double worst = 0.0;
  int trials = 0;
  while (trials < kC10Trials) {
    const auto n = static_cast<std::size_t>(len(rng));
    // Half the trials draw from a small integer range to force ties.
    const bool ties = trials % 2 == 0;
    std::vector<double> x(n);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = ties ? small(rng) : gauss(rng);
      y[i] = ties ? small(rng) : gauss(rng);
    }
    const auto constant = [](const std::vector<double>& a) {
      return std::all_of(a.begin(), a.end(), [&](double e) { return e == a.front(); });
    };
    if (constant(x) || constant(y)) continue;
    ++trials;

    const auto r = correlate(x, y);
    const double dp = std::abs(r.pearson - brute_pearson(x, y));
    const double ds = std::abs(r.spearman - brute_pearson(brute_ranks(x), brute_ranks(y)));
    const double dk = std::abs(r.kendall_tau - brute_kendall(x, y));
    worst = std::max({worst, dp, ds, dk});
    v.require(dp <= kC10Tol && ds <= kC10Tol && dk <= kC10Tol,
              "trial " + std::to_string(trials) + fmt(" max diff %.2e", std::max({dp, ds, dk})));
  }
  v.note(std::to_string(trials) + " vector pairs, max abs difference " + fmt("%.2e", worst));
  return v.done();
}

// ---------------------------------------------------------------- 11
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  Verdict v;
  RunConfig cfg;
  cfg.space = SearchSpace({layer(12, 0, 4), layer(12, 0, 4), layer(12, 0, 4)}, 2, 4);
  cfg.data.n_train = 256;
  cfg.data.n_val = 128;
  cfg.train.epochs = 4;
  cfg.train.batch_size = 32;
  cfg.train.lr0 = 0.05;
  cfg.train.complementary = true;
  cfg.retrain = cfg.train;
  cfg.retrain.complementary = false;
  cfg.evo.population_size = 12;
  cfg.evo.iterations = 4;
  cfg.evo.survivors = 4;
  cfg.solver.restarts = 3;
  cfg.solver.iterations = 300;
  cfg.prior_m = 50;
  cfg.budget = "0.5x";
  cfg.method = SearchMethod::EvoPrior;
  cfg.seed = kSeed;

  const fs::path root = fs::temp_directory_path() / ("widthsearch-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  const char* saved = std::getenv("WIDTHSEARCH_THREADS");
  const std::string restore = saved ? saved : "";

  std::string reference;
  std::vector<std::string> runs;
  int index = 0;
  for (const char* threads : {"1", "1", "2", "4"}) {
    ::setenv("WIDTHSEARCH_THREADS", threads, 1);
    const fs::path out = root / ("run" + std::to_string(index++));
    run_pipeline(cfg, out);
    const std::string bytes = slurp(out / "report.json");
    v.require(!bytes.empty(), "empty report.json");
    if (reference.empty()) {
      reference = bytes;
    } else {
      v.require(bytes == reference, std::string("report.json differs at WIDTHSEARCH_THREADS=") + threads);
    }
    runs.push_back(threads);
  }
  if (saved) {
    ::setenv("WIDTHSEARCH_THREADS", restore.c_str(), 1);
  } else {
    ::unsetenv("WIDTHSEARCH_THREADS");
  }
  fs::remove_all(root);

  std::string list;
  for (const auto& t : runs) list += (list.empty() ? "" : ",") + t;
  v.note(std::to_string(runs.size()) + " runs (threads " + list + "), " + std::to_string(reference.size()) +
         " identical bytes each");
  return v.done();
}

struct Criterion {
  int number;
  const char* name;
  Outcome (*run)();
};

const std::array<Criterion, 11> kCriteria{{
    {1, "cardinality exactness", cardinality_exactness},
    {2, "BCv2 cardinality", bcv2_cardinality},
    {3, "complement example", complement_example},
    {4, "training fairness counters", fairness_counters},
    {5, "gradient correctness", gradient_correctness},
    {6, "iterative-update equivalence", iterative_equivalence},
    {7, "prior solver quality", prior_solver_quality},
    {8, "search effectiveness", search_effectiveness},
    {9, "ranking fidelity ordering", ranking_fidelity},
    {10, "correlation oracles", correlation_oracles},
    {11, "determinism", determinism},
}};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"widthsearch acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-11)")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);

  int failures = 0;
  for (const auto& c : kCriteria) {
    if (only != 0 && c.number != only) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::printf("criterion %d %s: %s (%s)\n", c.number, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
