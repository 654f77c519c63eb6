#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "widthsearch/util.hpp"

namespace widthsearch {

/// One searchable layer. Candidate widths are {base + j*step : j = 0..K'-1}
/// when base_width > 0, and {j*step : j = 1..K'} when base_width == 0.
struct LayerSpec {
  int max_width = 0;
  int base_width = 0;
  int grid_count = 1;
  std::optional<int> tie_group;  // layers sharing a group always carry equal widths

  bool operator==(const LayerSpec&) const = default;
};

// Grid step d. Throws when the combination does not divide evenly.
int grid_step(const LayerSpec& spec);
std::vector<int> build_grid(const LayerSpec& spec);

struct WidthVector {
  std::vector<int> widths;

  WidthVector() = default;
  explicit WidthVector(std::vector<int> w) : widths(std::move(w)) {}

  std::size_t size() const { return widths.size(); }
  int operator[](std::size_t i) const { return widths[i]; }
  int& operator[](std::size_t i) { return widths[i]; }

  auto operator<=>(const WidthVector&) const = default;
  bool operator==(const WidthVector&) const = default;

  std::string str() const;
};

/// Ordered searchable layers between a fixed input and output dimension.
/// Tied layers form one "gene": the unit that sampling, crossover and
/// mutation operate on.
class SearchSpace {
 public:
  SearchSpace() = default;
  SearchSpace(std::vector<LayerSpec> layers, int input_dim, int output_dim);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t num_layers() const { return layers_.size(); }
  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }

  const std::vector<int>& grid(std::size_t layer) const { return grids_.at(layer); }
  int step(std::size_t layer) const { return steps_.at(layer); }
  // Position of `width` in the layer grid, or -1.
  int grid_index(std::size_t layer, int width) const;

  std::size_t num_genes() const { return genes_.size(); }
  const std::vector<std::size_t>& gene_layers(std::size_t gene) const { return genes_.at(gene); }
  std::size_t gene_of(std::size_t layer) const { return gene_of_.at(layer); }
  std::size_t gene_grid_size(std::size_t gene) const { return grids_[genes_[gene].front()].size(); }

  // Number of distinct width vectors; saturates at UINT64_MAX.
  uint64_t size() const;

  bool contains(const WidthVector& c) const;
  void validate(const WidthVector& c) const;

  WidthVector max_widths() const;
  WidthVector min_widths() const;
  std::vector<int> gene_indices(const WidthVector& c) const;
  WidthVector from_gene_indices(std::span<const int> idx) const;

  // All widths in lexicographic gene-index order. Throws if size() > limit.
  std::vector<WidthVector> enumerate(uint64_t limit = 1'000'000) const;

  nlohmann::json to_json() const;
  static SearchSpace from_json(const nlohmann::json& j);
  uint64_t hash() const;

  bool operator==(const SearchSpace& o) const {
    return layers_ == o.layers_ && input_dim_ == o.input_dim_ && output_dim_ == o.output_dim_;
  }

 private:
  std::vector<LayerSpec> layers_;
  int input_dim_ = 0;
  int output_dim_ = 0;
  std::vector<std::vector<int>> grids_;
  std::vector<int> steps_;
  std::vector<std::vector<std::size_t>> genes_;
  std::vector<std::size_t> gene_of_;
};

// Complementary width: (l + l_s) - c per layer when l_s > 0, l - c when
// l_s == 0, with full width mapping to itself in the latter case.
WidthVector complement(const WidthVector& c, const SearchSpace& space);

WidthVector sample_uniform(const SearchSpace& space, Rng& rng);

/// FLOPs lookup for the dense chain input -> layer 1 -> ... -> layer L -> output.
/// Table layer k (0..L) maps input width (k == 0 ? input_dim : c_k) and
/// output width (k == L ? output_dim : c_{k+1}) to an exact FLOPs count.
class FlopsTable {
 public:
  FlopsTable() = default;

  // 2 * c_in * c_out for every grid pair.
  static FlopsTable dense(const SearchSpace& space);

  std::size_t num_layers() const { return in_widths_.size(); }
  const std::vector<int>& in_widths(std::size_t k) const { return in_widths_.at(k); }
  const std::vector<int>& out_widths(std::size_t k) const { return out_widths_.at(k); }
  int64_t at(std::size_t k, int c_in, int c_out) const;
  int64_t at_index(std::size_t k, std::size_t i, std::size_t j) const {
    return values_[k][i * out_widths_[k].size() + j];
  }

  int64_t total(const WidthVector& c) const;

  uint64_t space_hash() const { return space_hash_; }

  nlohmann::json to_json() const;
  static FlopsTable from_json(const nlohmann::json& j);

 private:
  std::vector<std::vector<int>> in_widths_;
  std::vector<std::vector<int>> out_widths_;
  std::vector<std::vector<int64_t>> values_;
  uint64_t space_hash_ = 0;
};

int64_t flops(const WidthVector& c, const FlopsTable& table);

// Exact parameter count of the standalone dense network at width c.
int64_t param_count(const WidthVector& c, const SearchSpace& space);

nlohmann::json to_json(const WidthVector& c);
WidthVector width_from_json(const nlohmann::json& j);

}  // namespace widthsearch
