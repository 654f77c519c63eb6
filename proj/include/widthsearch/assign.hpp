#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "widthsearch/space.hpp"

namespace widthsearch {

enum class PrincipleKind { UA, BC, BCv2 };

// Physical width of a BCv2 layer: l + l_s (ExactFair) or l + l_s - d
// (PaperLiteral). Only ExactFair gives every channel the same cardinality.
enum class OverlapMode { ExactFair, PaperLiteral };

struct Principle {
  PrincipleKind kind = PrincipleKind::BC;
  OverlapMode overlap = OverlapMode::ExactFair;

  bool bilateral() const { return kind != PrincipleKind::UA; }
  std::string name() const;
  static Principle parse(const std::string& kind, const std::string& overlap = "exact-fair");
  std::string overlap_name() const;

  bool operator==(const Principle&) const = default;
};

enum class Side { Left, Right };

// Closed interval of 1-based channel indices; empty when last < first.
struct ChannelInterval {
  int first = 1;
  int last = 0;

  int size() const { return last >= first ? last - first + 1 : 0; }
  bool empty() const { return size() == 0; }
  bool contains(int ch) const { return ch >= first && ch <= last; }
  bool operator==(const ChannelInterval&) const = default;
};

struct IndexAssignment {
  ChannelInterval left;
  ChannelInterval right;  // empty under UA
  int physical_width = 0;

  const ChannelInterval& side(Side s) const { return s == Side::Left ? left : right; }
  // Multiplicity of channel `ch` in left ⊎ right.
  int multiplicity(int ch) const { return (left.contains(ch) ? 1 : 0) + (right.contains(ch) ? 1 : 0); }
  int total() const { return left.size() + right.size(); }
};

// Number of physical channels a layer needs under the principle.
int physical_width(const Principle& p, const LayerSpec& layer);

// Channel sets activated by width c. Requires c on the layer grid.
IndexAssignment indices(const Principle& p, const LayerSpec& layer, int c);

// Per physical channel (index 0 is channel 1), how many widths in the set
// activate it, counting both sides. Widths need only lie in [max(1, l_s), l].
std::vector<int64_t> cardinality_audit(const Principle& p, const LayerSpec& layer,
                                       std::span<const int> widths);

}  // namespace widthsearch
