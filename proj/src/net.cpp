#include "widthsearch/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace widthsearch {

namespace {

constexpr double kNormEps = 1e-5;
constexpr char kMagic[8] = {'W', 'S', 'N', 'E', 'T', 'C', 'K', '\0'};
constexpr uint32_t kCheckpointVersion = 1;

bool is_hidden(const MiniNet& net, std::size_t k) { return k + 1 < net.layers.size(); }

}  // namespace

std::size_t MiniNet::num_params() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.data.size() + l.bias.size();
  return n;
}

MiniNet make_mininet(std::span<const int> dims, bool normalize, Rng& rng) {
  if (dims.size() < 2) throw Error("a network needs at least an input and an output dimension");
  MiniNet net;
  net.normalize = normalize;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    if (dims[k] <= 0 || dims[k + 1] <= 0) throw Error("layer dimensions must be positive");
    DenseLayer layer;
    layer.weight = Matrix(dims[k + 1], dims[k]);
    layer.bias.assign(static_cast<std::size_t>(dims[k + 1]), 0.0);
    layer.activation = k + 2 == dims.size() ? Activation::Identity : Activation::Relu;
    const double bound = std::sqrt(6.0 / dims[k]);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& w : layer.weight.data) w = u(rng);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Path full_path(const MiniNet& net) {
  Path p;
  for (const auto& l : net.layers) p.push_back({0, l.in_dim(), 0, l.out_dim()});
  return p;
}

void check_path(const MiniNet& net, const Path& path) {
  if (path.size() != net.layers.size()) {
    throw Error("path has " + std::to_string(path.size()) + " slices for a " +
                std::to_string(net.layers.size()) + "-layer network");
  }
  for (std::size_t k = 0; k < path.size(); ++k) {
    const auto& s = path[k];
    const auto& l = net.layers[k];
    if (s.in_offset < 0 || s.in_count <= 0 || s.in_offset + s.in_count > l.in_dim() || s.out_offset < 0 ||
        s.out_count <= 0 || s.out_offset + s.out_count > l.out_dim()) {
      throw Error("slice of layer " + std::to_string(k) + " is outside the layer");
    }
    if (k > 0 && (path[k - 1].out_offset != s.in_offset || path[k - 1].out_count != s.in_count)) {
      throw Error("dimension mismatch between slices of layers " + std::to_string(k - 1) + " and " +
                  std::to_string(k));
    }
  }
  if (path.front().in_offset != 0 || path.front().in_count != net.input_dim()) {
    throw Error("the first slice must read the whole input");
  }
  if (path.back().out_offset != 0 || path.back().out_count != net.output_dim()) {
    throw Error("the last slice must write the whole output");
  }
}

ForwardResult forward(const MiniNet& net, const Batch& batch, const Path& path) {
  check_path(net, path);
  if (batch.x.cols != net.input_dim()) throw Error("batch feature count does not match the network input");
  if (batch.y.size() != static_cast<std::size_t>(batch.x.rows)) throw Error("batch label count mismatch");
  const int n = batch.size();
  if (n == 0) throw Error("empty batch");

  ForwardResult r;
  Tape& t = r.tape;
  t.labels = batch.y;
  Matrix current = batch.x;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto& layer = net.layers[k];
    const auto& s = path[k];
    Matrix z(n, s.out_count);
    for (int b = 0; b < n; ++b) {
      const double* in = current.row(b);
      double* out = z.row(b);
      for (int o = 0; o < s.out_count; ++o) {
        const double* w = layer.weight.row(s.out_offset + o) + s.in_offset;
        double acc = layer.bias[static_cast<std::size_t>(s.out_offset + o)];
        for (int i = 0; i < s.in_count; ++i) acc += w[i] * in[i];
        out[o] = acc;
      }
    }
    std::vector<double> inv_std;
    if (net.normalize && is_hidden(net, k)) {
      inv_std.resize(static_cast<std::size_t>(s.out_count));
      for (int o = 0; o < s.out_count; ++o) {
        double mean = 0.0;
        for (int b = 0; b < n; ++b) mean += z(b, o);
        mean /= n;
        double var = 0.0;
        for (int b = 0; b < n; ++b) var += (z(b, o) - mean) * (z(b, o) - mean);
        var /= n;
        const double is = 1.0 / std::sqrt(var + kNormEps);
        inv_std[static_cast<std::size_t>(o)] = is;
        for (int b = 0; b < n; ++b) z(b, o) = (z(b, o) - mean) * is;
      }
    }
    t.inputs.push_back(std::move(current));
    current = z;
    if (layer.activation == Activation::Relu) {
      for (double& v : current.data) v = v > 0.0 ? v : 0.0;
    }
    t.pre.push_back(std::move(z));
    t.inv_std.push_back(std::move(inv_std));
  }

  r.logits = current;
  t.probs = Matrix(n, current.cols);
  double loss = 0.0;
  for (int b = 0; b < n; ++b) {
    const double* row = current.row(b);
    const double mx = *std::max_element(row, row + current.cols);
    double sum = 0.0;
    for (int j = 0; j < current.cols; ++j) sum += std::exp(row[j] - mx);
    for (int j = 0; j < current.cols; ++j) t.probs(b, j) = std::exp(row[j] - mx) / sum;
    const int y = batch.y[static_cast<std::size_t>(b)];
    if (y < 0 || y >= current.cols) throw Error("label out of range");
    loss += (mx + std::log(sum)) - row[y];
  }
  r.loss = loss / n;
  return r;
}

std::size_t activation_elements(const Tape& tape) {
  std::size_t n = tape.probs.data.size();
  for (const auto& m : tape.inputs) n += m.data.size();
  for (const auto& m : tape.pre) n += m.data.size();
  for (const auto& v : tape.inv_std) n += v.size();
  return n;
}

Gradients Gradients::zeros_like(const MiniNet& net) {
  Gradients g;
  for (const auto& l : net.layers) {
    g.weight.emplace_back(l.out_dim(), l.in_dim());
    g.bias.emplace_back(l.bias.size(), 0.0);
    g.weight_mask.emplace_back(l.weight.data.size(), 0);
    g.bias_mask.emplace_back(l.bias.size(), 0);
  }
  return g;
}

void Gradients::scale(double factor) {
  for (auto& m : weight) {
    for (double& v : m.data) v *= factor;
  }
  for (auto& b : bias) {
    for (double& v : b) v *= factor;
  }
}

void Gradients::add(const Gradients& other, double factor) {
  for (std::size_t k = 0; k < weight.size(); ++k) {
    for (std::size_t i = 0; i < weight[k].data.size(); ++i) {
      if (!other.weight_mask[k][i]) continue;
      weight[k].data[i] += factor * other.weight[k].data[i];
      weight_mask[k][i] = 1;
    }
    for (std::size_t i = 0; i < bias[k].size(); ++i) {
      if (!other.bias_mask[k][i]) continue;
      bias[k][i] += factor * other.bias[k][i];
      bias_mask[k][i] = 1;
    }
  }
}

void backward(const MiniNet& net, const Tape& tape, const Path& path, double scale, Gradients& grads) {
  const int n = tape.probs.rows;
  Matrix delta = tape.probs;  // d loss / d logits
  for (int b = 0; b < n; ++b) {
    delta(b, tape.labels[static_cast<std::size_t>(b)]) -= 1.0;
  }
  const double factor = scale / n;
  for (double& v : delta.data) v *= factor;

  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const auto& layer = net.layers[k];
    const auto& s = path[k];
    const Matrix& pre = tape.pre[k];
    const Matrix& in = tape.inputs[k];

    if (layer.activation == Activation::Relu) {
      for (std::size_t i = 0; i < delta.data.size(); ++i) {
        if (pre.data[i] <= 0.0) delta.data[i] = 0.0;
      }
    }
    if (!tape.inv_std[k].empty()) {
      // Back through standardization: pre holds xhat.
      for (int o = 0; o < s.out_count; ++o) {
        double sum_d = 0.0;
        double sum_dx = 0.0;
        for (int b = 0; b < n; ++b) {
          sum_d += delta(b, o);
          sum_dx += delta(b, o) * pre(b, o);
        }
        const double is = tape.inv_std[k][static_cast<std::size_t>(o)];
        for (int b = 0; b < n; ++b) {
          delta(b, o) = is * (delta(b, o) - sum_d / n - pre(b, o) * sum_dx / n);
        }
      }
    }

    Matrix& gw = grads.weight[k];
    auto& gb = grads.bias[k];
    auto& wm = grads.weight_mask[k];
    auto& bm = grads.bias_mask[k];
    for (int o = 0; o < s.out_count; ++o) {
      const int row = s.out_offset + o;
      double* gwr = gw.row(row) + s.in_offset;
      double bsum = 0.0;
      for (int b = 0; b < n; ++b) {
        const double d = delta(b, o);
        bsum += d;
        const double* x = in.row(b);
        for (int i = 0; i < s.in_count; ++i) gwr[i] += d * x[i];
      }
      gb[static_cast<std::size_t>(row)] += bsum;
      bm[static_cast<std::size_t>(row)] = 1;
      std::fill_n(wm.begin() + static_cast<std::ptrdiff_t>(row) * gw.cols + s.in_offset, s.in_count, 1);
    }

    if (k == 0) break;
    Matrix din(n, s.in_count);
    for (int b = 0; b < n; ++b) {
      double* dst = din.row(b);
      for (int o = 0; o < s.out_count; ++o) {
        const double d = delta(b, o);
        if (d == 0.0) continue;
        const double* w = layer.weight.row(s.out_offset + o) + s.in_offset;
        for (int i = 0; i < s.in_count; ++i) dst[i] += d * w[i];
      }
    }
    delta = std::move(din);
  }
}

SgdState SgdState::zeros_like(const MiniNet& net) {
  SgdState s;
  for (const auto& l : net.layers) {
    s.weight_velocity.emplace_back(l.out_dim(), l.in_dim());
    s.bias_velocity.emplace_back(l.bias.size(), 0.0);
  }
  return s;
}

void sgd_step(MiniNet& net, const Gradients& grads, double lr, double momentum, SgdState& state) {
  if (grads.weight.size() != net.layers.size()) throw Error("gradient shape does not match the network");
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    for (std::size_t i = 0; i < grads.weight[k].data.size(); ++i) {
      if (grads.weight_mask[k][i] && !std::isfinite(grads.weight[k].data[i])) {
        throw Error("non-finite weight gradient in layer " + std::to_string(k));
      }
    }
    for (std::size_t i = 0; i < grads.bias[k].size(); ++i) {
      if (grads.bias_mask[k][i] && !std::isfinite(grads.bias[k][i])) {
        throw Error("non-finite bias gradient in layer " + std::to_string(k));
      }
    }
  }
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    auto& w = net.layers[k].weight.data;
    auto& v = state.weight_velocity[k].data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!grads.weight_mask[k][i]) continue;
      v[i] = momentum * v[i] + grads.weight[k].data[i];
      w[i] -= lr * v[i];
    }
    auto& b = net.layers[k].bias;
    auto& bv = state.bias_velocity[k];
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (!grads.bias_mask[k][i]) continue;
      bv[i] = momentum * bv[i] + grads.bias[k][i];
      b[i] -= lr * bv[i];
    }
  }
}

double grad_check(const MiniNet& net, const Batch& batch, const Path& path, double h) {
  const auto base = forward(net, batch, path);
  auto grads = Gradients::zeros_like(net);
  backward(net, base.tape, path, 1.0, grads);

  MiniNet probe = net;
  double worst = 0.0;
  auto compare = [&](double analytic, double& param) {
    const double saved = param;
    param = saved + h;
    const double up = forward(probe, batch, path).loss;
    param = saved - h;
    const double down = forward(probe, batch, path).loss;
    param = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  };
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto& s = path[k];
    for (int o = s.out_offset; o < s.out_offset + s.out_count; ++o) {
      for (int i = s.in_offset; i < s.in_offset + s.in_count; ++i) {
        compare(grads.weight[k](o, i), probe.layers[k].weight(o, i));
      }
      compare(grads.bias[k][static_cast<std::size_t>(o)], probe.layers[k].bias[static_cast<std::size_t>(o)]);
    }
  }
  return worst;
}

MiniNet extract_subnet(const MiniNet& net, const Path& path) {
  check_path(net, path);
  MiniNet sub;
  sub.normalize = net.normalize;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto& s = path[k];
    const auto& src = net.layers[k];
    DenseLayer l;
    l.activation = src.activation;
    l.weight = Matrix(s.out_count, s.in_count);
    l.bias.resize(static_cast<std::size_t>(s.out_count));
    for (int o = 0; o < s.out_count; ++o) {
      for (int i = 0; i < s.in_count; ++i) l.weight(o, i) = src.weight(s.out_offset + o, s.in_offset + i);
      l.bias[static_cast<std::size_t>(o)] = src.bias[static_cast<std::size_t>(s.out_offset + o)];
    }
    sub.layers.push_back(std::move(l));
  }
  return sub;
}

uint64_t checksum(const MiniNet& net) {
  uint64_t h = fnv1a64("");
  for (const auto& l : net.layers) {
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(l.weight.data.data()),
                                 l.weight.data.size() * sizeof(double)),
                h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(l.bias.data()), l.bias.size() * sizeof(double)), h);
  }
  return h;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::ostream& os, uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::ostream& os, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  put_u64(os, bits);
}

uint64_t get_le(std::istream& is, int bytes) {
  uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int ch = is.get();
    if (ch == std::char_traits<char>::eof()) throw Error("checkpoint is truncated");
    v |= static_cast<uint64_t>(static_cast<unsigned char>(ch)) << (8 * i);
  }
  return v;
}

double get_f64(std::istream& is) {
  const uint64_t bits = get_le(is, 8);
  double d;
  std::memcpy(&d, &bits, sizeof d);
  return d;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const MiniNet& net, const CheckpointInfo& info) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write checkpoint " + file.string());
  os.write(kMagic, sizeof kMagic);
  put_u32(os, kCheckpointVersion);
  put_u64(os, info.config_hash);
  put_u64(os, info.space_hash);
  put_u32(os, net.normalize ? 1u : 0u);
  put_u32(os, static_cast<uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    put_u32(os, static_cast<uint32_t>(l.out_dim()));
    put_u32(os, static_cast<uint32_t>(l.in_dim()));
    put_u32(os, static_cast<uint32_t>(l.activation));
  }
  for (const auto& l : net.layers) {
    for (double w : l.weight.data) put_f64(os, w);
    for (double b : l.bias) put_f64(os, b);
  }
  if (!os) throw Error("failed writing checkpoint " + file.string());
}

MiniNet load_checkpoint(const std::filesystem::path& file, CheckpointInfo* info) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + file.string());
  char magic[sizeof kMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw Error(file.string() + " is not a checkpoint");
  const auto version = static_cast<uint32_t>(get_le(is, 4));
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  CheckpointInfo ci;
  ci.config_hash = get_le(is, 8);
  ci.space_hash = get_le(is, 8);
  MiniNet net;
  net.normalize = get_le(is, 4) != 0;
  const auto count = static_cast<uint32_t>(get_le(is, 4));
  if (count == 0 || count > 4096) throw Error("implausible layer count in checkpoint");
  for (uint32_t k = 0; k < count; ++k) {
    const auto out = static_cast<int>(get_le(is, 4));
    const auto in = static_cast<int>(get_le(is, 4));
    const auto act = static_cast<uint32_t>(get_le(is, 4));
    if (out <= 0 || in <= 0 || act > 1) throw Error("corrupt layer header in checkpoint");
    DenseLayer l;
    l.weight = Matrix(out, in);
    l.bias.assign(static_cast<std::size_t>(out), 0.0);
    l.activation = static_cast<Activation>(act);
    net.layers.push_back(std::move(l));
  }
  for (auto& l : net.layers) {
    for (double& w : l.weight.data) w = get_f64(is);
    for (double& b : l.bias) b = get_f64(is);
  }
  if (info) *info = ci;
  return net;
}

}  // namespace widthsearch
