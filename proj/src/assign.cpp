#include "widthsearch/assign.hpp"

#include <algorithm>

namespace widthsearch {

std::string Principle::name() const {
  switch (kind) {
    case PrincipleKind::UA: return "ua";
    case PrincipleKind::BC: return "bc";
    case PrincipleKind::BCv2: return "bcv2";
  }
  return "?";
}

std::string Principle::overlap_name() const {
  return overlap == OverlapMode::ExactFair ? "exact-fair" : "paper-literal";
}

Principle Principle::parse(const std::string& kind, const std::string& overlap) {
  Principle p;
  if (kind == "ua") {
    p.kind = PrincipleKind::UA;
  } else if (kind == "bc") {
    p.kind = PrincipleKind::BC;
  } else if (kind == "bcv2") {
    p.kind = PrincipleKind::BCv2;
  } else {
    throw Error("unknown principle '" + kind + "' (expected ua, bc or bcv2)");
  }
  if (overlap == "exact-fair" || overlap == "exact_fair") {
    p.overlap = OverlapMode::ExactFair;
  } else if (overlap == "paper-literal" || overlap == "paper_literal") {
    p.overlap = OverlapMode::PaperLiteral;
  } else {
    throw Error("unknown overlap mode '" + overlap + "' (expected exact-fair or paper-literal)");
  }
  return p;
}

int physical_width(const Principle& p, const LayerSpec& layer) {
  const int l = layer.max_width;
  const int ls = layer.base_width;
  if (p.kind != PrincipleKind::BCv2 || ls == 0) return l;
  if (p.overlap == OverlapMode::ExactFair) return l + ls;
  const int d = grid_step(layer);
  if (ls < d) {
    throw Error("paper-literal overlap needs base_width >= grid step (l_s=" + std::to_string(ls) +
                ", d=" + std::to_string(d) + ")");
  }
  return l + ls - d;
}

namespace {

IndexAssignment assignment(const Principle& p, const LayerSpec& layer, int c) {
  const int lo = std::max(1, layer.base_width);
  if (c < lo || c > layer.max_width) {
    throw Error("width " + std::to_string(c) + " outside [" + std::to_string(lo) + ", " +
                std::to_string(layer.max_width) + "]");
  }
  IndexAssignment a;
  a.physical_width = physical_width(p, layer);
  a.left = {1, c};
  if (p.bilateral()) a.right = {a.physical_width - c + 1, a.physical_width};
  return a;
}

}  // namespace

IndexAssignment indices(const Principle& p, const LayerSpec& layer, int c) {
  const auto grid = build_grid(layer);
  if (!std::binary_search(grid.begin(), grid.end(), c)) {
    throw Error("width " + std::to_string(c) + " is not on the layer grid");
  }
  return assignment(p, layer, c);
}

std::vector<int64_t> cardinality_audit(const Principle& p, const LayerSpec& layer,
                                       std::span<const int> widths) {
  std::vector<int64_t> counts(static_cast<std::size_t>(physical_width(p, layer)), 0);
  for (int c : widths) {
    const auto a = assignment(p, layer, c);
    for (int ch = a.left.first; ch <= a.left.last; ++ch) ++counts[static_cast<std::size_t>(ch - 1)];
    for (int ch = a.right.first; ch <= a.right.last; ++ch) ++counts[static_cast<std::size_t>(ch - 1)];
  }
  return counts;
}

}  // namespace widthsearch
