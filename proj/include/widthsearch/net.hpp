#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "widthsearch/util.hpp"

namespace widthsearch {

// Dense row-major matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
};

enum class Activation : uint32_t { Relu = 0, Identity = 1 };

struct DenseLayer {
  Matrix weight;  // [max_out x max_in]
  std::vector<double> bias;
  Activation activation = Activation::Relu;

  int in_dim() const { return weight.cols; }
  int out_dim() const { return weight.rows; }
};

/// Width-sliceable feed-forward classifier. Hidden layers use ReLU; the last
/// layer emits logits. With `normalize`, every hidden pre-activation is
/// standardized with the statistics of the current batch (train and eval
/// alike, no learned affine).
struct MiniNet {
  std::vector<DenseLayer> layers;
  bool normalize = false;

  int input_dim() const { return layers.front().in_dim(); }
  int output_dim() const { return layers.back().out_dim(); }
  std::size_t num_params() const;
};

// dims = {input, hidden_1, ..., hidden_L, output}. Weights are drawn from
// U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases start at zero.
MiniNet make_mininet(std::span<const int> dims, bool normalize, Rng& rng);

// 0-based physical offsets of the input and output units a layer reads/writes.
struct LayerSlice {
  int in_offset = 0;
  int in_count = 0;
  int out_offset = 0;
  int out_count = 0;

  bool operator==(const LayerSlice&) const = default;
};
using Path = std::vector<LayerSlice>;

Path full_path(const MiniNet& net);
// Throws on any slice that leaves the layer or disagrees with its neighbour.
void check_path(const MiniNet& net, const Path& path);

struct Batch {
  Matrix x;  // one sample per row
  std::vector<int> y;

  int size() const { return x.rows; }
};

struct Tape {
  std::vector<Matrix> inputs;  // inputs[k]: batch x in_count of layer k
  std::vector<Matrix> pre;     // pre-activation (after normalization when enabled)
  std::vector<std::vector<double>> inv_std;
  Matrix probs;                // softmax of the logits
  std::vector<int> labels;
};

struct ForwardResult {
  Matrix logits;
  double loss = 0.0;  // mean softmax cross-entropy
  Tape tape;
};

ForwardResult forward(const MiniNet& net, const Batch& batch, const Path& path);

// Number of doubles retained by a tape for the backward pass.
std::size_t activation_elements(const Tape& tape);

/// Gradient buffers shaped like the network, with a mask of the entries a
/// backward pass actually touched.
struct Gradients {
  std::vector<Matrix> weight;
  std::vector<std::vector<double>> bias;
  std::vector<std::vector<uint8_t>> weight_mask;
  std::vector<std::vector<uint8_t>> bias_mask;

  static Gradients zeros_like(const MiniNet& net);
  void scale(double factor);
  void add(const Gradients& other, double factor = 1.0);
};

// Accumulates scale * d(loss)/d(params) into grads.
void backward(const MiniNet& net, const Tape& tape, const Path& path, double scale, Gradients& grads);

struct SgdState {
  std::vector<Matrix> weight_velocity;
  std::vector<std::vector<double>> bias_velocity;

  static SgdState zeros_like(const MiniNet& net);
};

// v <- momentum * v + g; w <- w - lr * v, applied to masked entries only.
// Entries outside the mask (weights and velocities) stay bit-identical.
// Throws before touching anything if a masked gradient is not finite.
void sgd_step(MiniNet& net, const Gradients& grads, double lr, double momentum, SgdState& state);

// Max relative error between backward() and central differences over every
// parameter in the slice.
double grad_check(const MiniNet& net, const Batch& batch, const Path& path, double h = 1e-5);

// Standalone network holding copies of the sliced parameters.
MiniNet extract_subnet(const MiniNet& net, const Path& path);

uint64_t checksum(const MiniNet& net);

struct CheckpointInfo {
  uint64_t config_hash = 0;
  uint64_t space_hash = 0;
};

void save_checkpoint(const std::filesystem::path& file, const MiniNet& net, const CheckpointInfo& info);
MiniNet load_checkpoint(const std::filesystem::path& file, CheckpointInfo* info = nullptr);

}  // namespace widthsearch
