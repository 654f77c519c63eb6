#include "widthsearch/space.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <sstream>

namespace widthsearch {

using nlohmann::json;

int grid_step(const LayerSpec& spec) {
  const int l = spec.max_width;
  const int ls = spec.base_width;
  const int k = spec.grid_count;
  if (l <= 0) throw Error("layer max_width must be positive");
  if (ls < 0 || ls >= l) throw Error("layer base_width must satisfy 0 <= l_s < l");
  if (k <= 0) throw Error("layer grid_count must be positive");
  if (ls == 0) {
    if (l % k != 0) {
      throw Error("max_width " + std::to_string(l) + " is not divisible into " + std::to_string(k) +
                  " groups");
    }
    return l / k;
  }
  if (k < 2) throw Error("a layer with base_width > 0 needs grid_count >= 2");
  if ((l - ls) % (k - 1) != 0) {
    throw Error("(max_width - base_width) = " + std::to_string(l - ls) + " is not divisible by " +
                std::to_string(k - 1));
  }
  return (l - ls) / (k - 1);
}

std::vector<int> build_grid(const LayerSpec& spec) {
  const int d = grid_step(spec);
  std::vector<int> grid;
  grid.reserve(static_cast<std::size_t>(spec.grid_count));
  if (spec.base_width == 0) {
    for (int j = 1; j <= spec.grid_count; ++j) grid.push_back(j * d);
  } else {
    for (int j = 0; j < spec.grid_count; ++j) grid.push_back(spec.base_width + j * d);
  }
  return grid;
}

std::string WidthVector::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
  os << ')';
  return os.str();
}

SearchSpace::SearchSpace(std::vector<LayerSpec> layers, int input_dim, int output_dim)
    : layers_(std::move(layers)), input_dim_(input_dim), output_dim_(output_dim) {
  if (layers_.empty()) throw Error("search space needs at least one layer");
  if (input_dim_ <= 0 || output_dim_ <= 0) throw Error("input_dim and output_dim must be positive");
  std::map<int, std::size_t> group_gene;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    grids_.push_back(build_grid(layers_[i]));
    steps_.push_back(grid_step(layers_[i]));
    const auto& tie = layers_[i].tie_group;
    if (tie) {
      auto it = group_gene.find(*tie);
      if (it != group_gene.end()) {
        const std::size_t first = genes_[it->second].front();
        if (grids_[first] != grids_[i] || layers_[first].base_width != layers_[i].base_width) {
          throw Error("tied layers " + std::to_string(first) + " and " + std::to_string(i) +
                      " have different grids");
        }
        genes_[it->second].push_back(i);
        gene_of_.push_back(it->second);
        continue;
      }
      group_gene[*tie] = genes_.size();
    }
    gene_of_.push_back(genes_.size());
    genes_.push_back({i});
  }
}

int SearchSpace::grid_index(std::size_t layer, int width) const {
  const auto& g = grids_.at(layer);
  auto it = std::lower_bound(g.begin(), g.end(), width);
  if (it == g.end() || *it != width) return -1;
  return static_cast<int>(it - g.begin());
}

uint64_t SearchSpace::size() const {
  uint64_t n = 1;
  for (std::size_t g = 0; g < genes_.size(); ++g) {
    const uint64_t k = gene_grid_size(g);
    if (n > std::numeric_limits<uint64_t>::max() / k) return std::numeric_limits<uint64_t>::max();
    n *= k;
  }
  return n;
}

bool SearchSpace::contains(const WidthVector& c) const {
  if (c.size() != layers_.size()) return false;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (grid_index(i, c[i]) < 0) return false;
    if (c[i] != c[genes_[gene_of_[i]].front()]) return false;
  }
  return true;
}

void SearchSpace::validate(const WidthVector& c) const {
  if (c.size() != layers_.size()) {
    throw Error("width " + c.str() + " has " + std::to_string(c.size()) + " entries, space has " +
                std::to_string(layers_.size()) + " layers");
  }
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (grid_index(i, c[i]) < 0) {
      throw Error("width " + c.str() + ": " + std::to_string(c[i]) + " is not on the grid of layer " +
                  std::to_string(i));
    }
    if (c[i] != c[genes_[gene_of_[i]].front()]) {
      throw Error("width " + c.str() + ": tied layers disagree at layer " + std::to_string(i));
    }
  }
}

WidthVector SearchSpace::max_widths() const {
  WidthVector c;
  for (const auto& g : grids_) c.widths.push_back(g.back());
  return c;
}

WidthVector SearchSpace::min_widths() const {
  WidthVector c;
  for (const auto& g : grids_) c.widths.push_back(g.front());
  return c;
}

std::vector<int> SearchSpace::gene_indices(const WidthVector& c) const {
  validate(c);
  std::vector<int> idx(genes_.size());
  for (std::size_t g = 0; g < genes_.size(); ++g) {
    const std::size_t layer = genes_[g].front();
    idx[g] = grid_index(layer, c[layer]);
  }
  return idx;
}

WidthVector SearchSpace::from_gene_indices(std::span<const int> idx) const {
  if (idx.size() != genes_.size()) throw Error("gene index vector has the wrong length");
  WidthVector c(std::vector<int>(layers_.size()));
  for (std::size_t g = 0; g < genes_.size(); ++g) {
    const int i = idx[g];
    const auto& grid = grids_[genes_[g].front()];
    if (i < 0 || static_cast<std::size_t>(i) >= grid.size()) throw Error("gene index out of range");
    for (std::size_t layer : genes_[g]) c[layer] = grid[static_cast<std::size_t>(i)];
  }
  return c;
}

std::vector<WidthVector> SearchSpace::enumerate(uint64_t limit) const {
  const uint64_t n = size();
  if (n > limit) {
    throw Error("search space has " + std::to_string(n) + " widths, enumeration limit is " +
                std::to_string(limit));
  }
  std::vector<WidthVector> out;
  out.reserve(n);
  std::vector<int> idx(genes_.size(), 0);
  for (uint64_t k = 0; k < n; ++k) {
    out.push_back(from_gene_indices(idx));
    for (std::size_t g = genes_.size(); g-- > 0;) {
      if (++idx[g] < static_cast<int>(gene_grid_size(g))) break;
      idx[g] = 0;
    }
  }
  return out;
}

json SearchSpace::to_json() const {
  json layers = json::array();
  for (const auto& l : layers_) {
    json e = {{"max_width", l.max_width}, {"base_width", l.base_width}, {"grid_count", l.grid_count}};
    e["tie_group"] = l.tie_group ? json(*l.tie_group) : json(nullptr);
    layers.push_back(e);
  }
  return {{"input_dim", input_dim_}, {"output_dim", output_dim_}, {"layers", layers}};
}

SearchSpace SearchSpace::from_json(const json& j) {
  std::vector<LayerSpec> layers;
  for (const auto& e : j.at("layers")) {
    LayerSpec s;
    s.max_width = e.at("max_width").get<int>();
    s.base_width = e.value("base_width", 0);
    s.grid_count = e.at("grid_count").get<int>();
    if (e.contains("tie_group") && !e["tie_group"].is_null()) s.tie_group = e["tie_group"].get<int>();
    layers.push_back(s);
  }
  return SearchSpace(std::move(layers), j.at("input_dim").get<int>(), j.at("output_dim").get<int>());
}

uint64_t SearchSpace::hash() const { return fnv1a64(to_json().dump()); }

WidthVector complement(const WidthVector& c, const SearchSpace& space) {
  space.validate(c);
  WidthVector out = c;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& s = space.layer(i);
    if (s.base_width > 0) {
      out[i] = s.max_width + s.base_width - c[i];
    } else {
      out[i] = c[i] == s.max_width ? s.max_width : s.max_width - c[i];
    }
  }
  return out;
}

WidthVector sample_uniform(const SearchSpace& space, Rng& rng) {
  std::vector<int> idx(space.num_genes());
  for (std::size_t g = 0; g < idx.size(); ++g) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(space.gene_grid_size(g)) - 1);
    idx[g] = pick(rng);
  }
  return space.from_gene_indices(idx);
}

FlopsTable FlopsTable::dense(const SearchSpace& space) {
  FlopsTable t;
  const std::size_t L = space.num_layers();
  for (std::size_t k = 0; k <= L; ++k) {
    std::vector<int> in = k == 0 ? std::vector<int>{space.input_dim()} : space.grid(k - 1);
    std::vector<int> out = k == L ? std::vector<int>{space.output_dim()} : space.grid(k);
    std::vector<int64_t> vals;
    vals.reserve(in.size() * out.size());
    for (int ci : in) {
      for (int co : out) vals.push_back(2LL * ci * co);
    }
    t.in_widths_.push_back(std::move(in));
    t.out_widths_.push_back(std::move(out));
    t.values_.push_back(std::move(vals));
  }
  t.space_hash_ = space.hash();
  return t;
}

int64_t FlopsTable::at(std::size_t k, int c_in, int c_out) const {
  if (k >= in_widths_.size()) throw Error("FLOPs table has no layer " + std::to_string(k));
  const auto& in = in_widths_[k];
  const auto& out = out_widths_[k];
  auto i = std::find(in.begin(), in.end(), c_in);
  auto o = std::find(out.begin(), out.end(), c_out);
  if (i == in.end() || o == out.end()) {
    throw Error("FLOPs table has no entry for layer " + std::to_string(k) + " (" +
                std::to_string(c_in) + " -> " + std::to_string(c_out) + ")");
  }
  return at_index(k, static_cast<std::size_t>(i - in.begin()), static_cast<std::size_t>(o - out.begin()));
}

int64_t FlopsTable::total(const WidthVector& c) const {
  const std::size_t L = in_widths_.size() - 1;
  if (c.size() != L) throw Error("width " + c.str() + " does not match the FLOPs table depth");
  int64_t sum = 0;
  for (std::size_t k = 0; k <= L; ++k) {
    const int ci = k == 0 ? in_widths_[0].front() : c[k - 1];
    const int co = k == L ? out_widths_[L].front() : c[k];
    sum += at(k, ci, co);
  }
  return sum;
}

json FlopsTable::to_json() const {
  json layers = json::array();
  for (std::size_t k = 0; k < in_widths_.size(); ++k) {
    json rows = json::array();
    for (std::size_t i = 0; i < in_widths_[k].size(); ++i) {
      json row = json::array();
      for (std::size_t j = 0; j < out_widths_[k].size(); ++j) row.push_back(at_index(k, i, j));
      rows.push_back(row);
    }
    layers.push_back({{"layer", k}, {"in_widths", in_widths_[k]}, {"out_widths", out_widths_[k]}, {"flops", rows}});
  }
  return {{"space_hash", hex64(space_hash_)}, {"convention", "dense: 2*c_in*c_out"}, {"layers", layers}};
}

FlopsTable FlopsTable::from_json(const json& j) {
  FlopsTable t;
  t.space_hash_ = parse_hex64(j.at("space_hash").get<std::string>());
  for (const auto& e : j.at("layers")) {
    auto in = e.at("in_widths").get<std::vector<int>>();
    auto out = e.at("out_widths").get<std::vector<int>>();
    const auto& rows = e.at("flops");
    if (rows.size() != in.size()) throw Error("flops.json: row count does not match in_widths");
    std::vector<int64_t> vals;
    for (const auto& row : rows) {
      if (row.size() != out.size()) throw Error("flops.json: column count does not match out_widths");
      for (const auto& v : row) {
        if (!v.is_number_integer()) throw Error("flops.json: FLOPs must be exact integers");
        int64_t x = v.get<int64_t>();
        if (x < 0) throw Error("flops.json: FLOPs must be non-negative");
        vals.push_back(x);
      }
    }
    t.in_widths_.push_back(std::move(in));
    t.out_widths_.push_back(std::move(out));
    t.values_.push_back(std::move(vals));
  }
  if (t.in_widths_.empty()) throw Error("flops.json: no layers");
  return t;
}

int64_t flops(const WidthVector& c, const FlopsTable& table) { return table.total(c); }

int64_t param_count(const WidthVector& c, const SearchSpace& space) {
  space.validate(c);
  int64_t n = 0;
  int in = space.input_dim();
  for (std::size_t i = 0; i <= c.size(); ++i) {
    const int out = i == c.size() ? space.output_dim() : c[i];
    n += static_cast<int64_t>(in) * out + out;
    in = out;
  }
  return n;
}

json to_json(const WidthVector& c) { return c.widths; }

WidthVector width_from_json(const json& j) { return WidthVector(j.get<std::vector<int>>()); }

}  // namespace widthsearch
