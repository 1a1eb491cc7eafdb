#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "plop/nfn.hpp"

namespace plop {

// The seven adapter-eligible projection types of a gated-MLP decoder block.
// Canonical order below doubles as the tie-break order everywhere.
enum class ModuleType { kQuery, kKey, kValue, kOutProj, kGateProj, kUpProj, kDownProj };

inline constexpr std::array<ModuleType, 7> kCanonicalTypes = {
    ModuleType::kQuery,    ModuleType::kKey,    ModuleType::kValue,  ModuleType::kOutProj,
    ModuleType::kGateProj, ModuleType::kUpProj, ModuleType::kDownProj,
};

const char* canonical_name(ModuleType t);
std::optional<ModuleType> type_from_name(std::string_view canonical);

// Maps nonstandard module-name suffixes to canonical names, e.g.
// {"wq": "q_proj"}. Longest matching suffix wins.
using AliasMap = std::map<std::string, std::string>;

// Resolves a dotted module path ("model.layers.3.self_attn.q_proj") to its
// type by suffix match against canonical names, then aliases.
std::optional<ModuleType> resolve_module_type(std::string_view module_name,
                                              const AliasMap& aliases = {});

// Extracts a ".N." layer index from a dotted module path, if present.
std::optional<int> layer_from_name(std::string_view module_name);

struct TypeScoreTable {
  struct Row {
    ModuleType type;
    double mean = 0.0;
    int64_t count = 0;
  };
  std::vector<Row> rows;  // canonical order, only types that had modules

  const Row* find(ModuleType t) const;
  bool has(ModuleType t) const { return find(t) != nullptr; }
};

// Unweighted per-type mean of module scores. Modules whose names resolve to
// no type are an error listing every offender.
TypeScoreTable aggregate_by_type(const std::vector<NFNScore>& scores,
                                 const AliasMap& aliases = {});

// k types with the lowest / highest mean, ties broken by canonical order.
// k < 1 or k > |table| is an error.
std::vector<ModuleType> select_lowest(const TypeScoreTable& table, int k);
std::vector<ModuleType> select_highest(const TypeScoreTable& table, int k);

struct PlacementPlan {
  std::string strategy;
  int k = 0;
  int rank = 0;
  int alpha = 0;
  std::vector<std::string> target_modules;      // canonical type names
  std::vector<std::pair<std::string, float>> scores;  // canonical order
  uint64_t seed = 0;
  std::string created_from;

  bool operator==(const PlacementPlan&) const = default;
};

// strategy "plop" takes the k lowest types, "plop_inverse" the k highest;
// "attn" is {q,k,v}, "mlp" is {gate,up,down}, "all" every type. Fixed
// strategies require their types present in the table.
std::vector<ModuleType> select_for_strategy(const TypeScoreTable& table,
                                            std::string_view strategy, int k);

// alpha <= 0 picks the 2*rank default.
PlacementPlan emit_plan(const TypeScoreTable& table, std::string_view strategy, int k, int rank,
                        int alpha, uint64_t seed, std::string_view created_from);

std::string plan_to_json(const PlacementPlan& plan);
PlacementPlan plan_from_json(std::string_view text);
std::string plan_to_text(const PlacementPlan& plan);

}  // namespace plop
