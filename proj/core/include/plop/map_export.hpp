#pragma once

#include <string>
#include <vector>

#include "plop/nfn.hpp"
#include "plop/placement.hpp"

namespace plop {

// Per-layer, per-type score grid. Rows are layers in ascending order, columns
// follow the canonical type order. A NaN cell has no module behind it.
struct NFNMap {
  std::vector<int> layers;
  std::vector<float> cells;  // layers.size() x 7, row-major

  float cell(size_t layer_index, ModuleType t) const;
  void set_cell(size_t layer_index, ModuleType t, float value);
};

// Folds per-module scores into the grid, resolving type and layer from each
// module name. Several modules landing on the same cell are averaged. A module
// that resolves to no type or carries no layer index is an error.
NFNMap map_from_scores(const std::vector<NFNScore>& scores, const AliasMap& aliases = {});

// layer,q_proj,... header; empty field for an absent cell. Scores round-trip
// through the text exactly at f32 width.
std::string map_to_csv(const NFNMap& map);
NFNMap map_from_csv(std::string_view text);

// Standalone SVG heat map. Diverging color scale centered at 1.0 and clamped
// to [0.5, 3.0]; output depends on nothing but the map, so identical maps
// render to identical bytes.
std::string map_to_svg(const NFNMap& map);

std::string type_scores_text(const TypeScoreTable& table);

}  // namespace plop
