#include "plop/placement.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace plop {

namespace {

using ordered_json = nlohmann::ordered_json;

bool suffix_matches(std::string_view name, std::string_view candidate) {
  if (name == candidate) return true;
  if (name.size() <= candidate.size()) return false;
  return name.ends_with(candidate) && name[name.size() - candidate.size() - 1] == '.';
}

}  // namespace

const char* canonical_name(ModuleType t) {
  switch (t) {
    case ModuleType::kQuery: return "q_proj";
    case ModuleType::kKey: return "k_proj";
    case ModuleType::kValue: return "v_proj";
    case ModuleType::kOutProj: return "o_proj";
    case ModuleType::kGateProj: return "gate_proj";
    case ModuleType::kUpProj: return "up_proj";
    case ModuleType::kDownProj: return "down_proj";
  }
  throw std::logic_error("canonical_name: bad ModuleType");
}

std::optional<ModuleType> type_from_name(std::string_view canonical) {
  for (ModuleType t : kCanonicalTypes) {
    if (canonical == canonical_name(t)) return t;
  }
  return std::nullopt;
}

std::optional<ModuleType> resolve_module_type(std::string_view module_name,
                                              const AliasMap& aliases) {
  std::optional<ModuleType> best;
  size_t best_len = 0;
  for (ModuleType t : kCanonicalTypes) {
    std::string_view cand = canonical_name(t);
    if (suffix_matches(module_name, cand) && cand.size() > best_len) {
      best = t;
      best_len = cand.size();
    }
  }
  for (const auto& [key, target] : aliases) {
    if (!suffix_matches(module_name, key) || key.size() <= best_len) continue;
    auto t = type_from_name(target);
    if (!t) {
      throw std::invalid_argument("alias '" + key + "' maps to unknown type '" + target + "'");
    }
    best = t;
    best_len = key.size();
  }
  return best;
}

std::optional<int> layer_from_name(std::string_view module_name) {
  size_t pos = 0;
  while (pos < module_name.size()) {
    size_t dot = module_name.find('.', pos);
    std::string_view seg = module_name.substr(pos, dot == std::string_view::npos ? dot : dot - pos);
    if (!seg.empty() && std::all_of(seg.begin(), seg.end(),
                                    [](unsigned char c) { return std::isdigit(c); })) {
      return std::stoi(std::string(seg));
    }
    if (dot == std::string_view::npos) break;
    pos = dot + 1;
  }
  return std::nullopt;
}

const TypeScoreTable::Row* TypeScoreTable::find(ModuleType t) const {
  for (const Row& r : rows) {
    if (r.type == t) return &r;
  }
  return nullptr;
}

TypeScoreTable aggregate_by_type(const std::vector<NFNScore>& scores, const AliasMap& aliases) {
  std::array<double, 7> sums{};
  std::array<int64_t, 7> counts{};
  std::vector<std::string> unresolved;
  for (const NFNScore& s : scores) {
    auto t = resolve_module_type(s.module_name, aliases);
    if (!t) {
      unresolved.push_back(s.module_name);
      continue;
    }
    size_t i = static_cast<size_t>(*t);
    sums[i] += static_cast<double>(s.score);
    counts[i] += 1;
  }
  if (!unresolved.empty()) {
    std::string msg = "aggregate_by_type: unresolvable module names:";
    for (const auto& n : unresolved) msg += " '" + n + "'";
    throw std::runtime_error(msg);
  }
  TypeScoreTable table;
  for (ModuleType t : kCanonicalTypes) {
    size_t i = static_cast<size_t>(t);
    if (counts[i] > 0) {
      table.rows.push_back({t, sums[i] / static_cast<double>(counts[i]), counts[i]});
    }
  }
  return table;
}

namespace {

std::vector<ModuleType> select_sorted(const TypeScoreTable& table, int k, bool lowest) {
  if (k < 1 || static_cast<size_t>(k) > table.rows.size()) {
    throw std::invalid_argument("selection: k=" + std::to_string(k) + " outside 1.." +
                                std::to_string(table.rows.size()));
  }
  std::vector<TypeScoreTable::Row> rows = table.rows;
  std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    if (a.mean != b.mean) return lowest ? a.mean < b.mean : a.mean > b.mean;
    return static_cast<int>(a.type) < static_cast<int>(b.type);
  });
  std::vector<ModuleType> out;
  out.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(rows[static_cast<size_t>(i)].type);
  return out;
}

}  // namespace

std::vector<ModuleType> select_lowest(const TypeScoreTable& table, int k) {
  return select_sorted(table, k, true);
}

std::vector<ModuleType> select_highest(const TypeScoreTable& table, int k) {
  return select_sorted(table, k, false);
}

std::vector<ModuleType> select_for_strategy(const TypeScoreTable& table,
                                            std::string_view strategy, int k) {
  auto fixed = [&](std::vector<ModuleType> types) {
    for (ModuleType t : types) {
      if (!table.has(t)) {
        throw std::runtime_error("strategy '" + std::string(strategy) + "' needs type '" +
                                 canonical_name(t) + "' which is absent from the score table");
      }
    }
    return types;
  };
  if (strategy == "plop") return select_lowest(table, k);
  if (strategy == "plop_inverse") return select_highest(table, k);
  if (strategy == "attn") {
    return fixed({ModuleType::kQuery, ModuleType::kKey, ModuleType::kValue});
  }
  if (strategy == "mlp") {
    return fixed({ModuleType::kGateProj, ModuleType::kUpProj, ModuleType::kDownProj});
  }
  if (strategy == "all") {
    return fixed(std::vector<ModuleType>(kCanonicalTypes.begin(), kCanonicalTypes.end()));
  }
  throw std::invalid_argument("unknown strategy '" + std::string(strategy) +
                              "' (expected plop, plop_inverse, attn, mlp or all)");
}

PlacementPlan emit_plan(const TypeScoreTable& table, std::string_view strategy, int k, int rank,
                        int alpha, uint64_t seed, std::string_view created_from) {
  if (rank < 1) {
    throw std::invalid_argument("emit_plan: rank must be >= 1, got " + std::to_string(rank));
  }
  auto selection = select_for_strategy(table, strategy, k);
  PlacementPlan plan;
  plan.strategy = std::string(strategy);
  plan.k = static_cast<int>(selection.size());
  plan.rank = rank;
  plan.alpha = alpha > 0 ? alpha : 2 * rank;
  for (ModuleType t : selection) plan.target_modules.emplace_back(canonical_name(t));
  for (const auto& row : table.rows) {
    plan.scores.emplace_back(canonical_name(row.type), static_cast<float>(row.mean));
  }
  plan.seed = seed;
  plan.created_from = std::string(created_from);
  return plan;
}

std::string plan_to_json(const PlacementPlan& plan) {
  ordered_json j;
  j["strategy"] = plan.strategy;
  j["k"] = plan.k;
  j["rank"] = plan.rank;
  j["alpha"] = plan.alpha;
  j["target_modules"] = plan.target_modules;
  ordered_json scores = ordered_json::object();
  for (const auto& [name, score] : plan.scores) scores[name] = static_cast<double>(score);
  j["scores"] = scores;
  j["seed"] = plan.seed;
  j["created_from"] = plan.created_from;
  return j.dump(2) + "\n";
}

PlacementPlan plan_from_json(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("plan_from_json: parse failure: ") + e.what());
  }
  for (const char* field :
       {"strategy", "k", "rank", "alpha", "target_modules", "scores", "seed", "created_from"}) {
    if (!j.contains(field)) {
      throw std::runtime_error(std::string("plan_from_json: missing field '") + field + "'");
    }
  }
  PlacementPlan plan;
  plan.strategy = j["strategy"].get<std::string>();
  plan.k = j["k"].get<int>();
  plan.rank = j["rank"].get<int>();
  plan.alpha = j["alpha"].get<int>();
  plan.target_modules = j["target_modules"].get<std::vector<std::string>>();
  for (const auto& [key, val] : j["scores"].items()) {
    plan.scores.emplace_back(key, static_cast<float>(val.get<double>()));
  }
  plan.seed = j["seed"].get<uint64_t>();
  plan.created_from = j["created_from"].get<std::string>();
  return plan;
}

std::string plan_to_text(const PlacementPlan& plan) {
  std::string out;
  out += "strategy: " + plan.strategy + "\n";
  out += "rank: " + std::to_string(plan.rank) + "\n";
  out += "alpha: " + std::to_string(plan.alpha) + "\n";
  out += "targets:";
  for (const auto& t : plan.target_modules) out += " " + t;
  out += "\nscores:\n";
  for (const auto& [name, score] : plan.scores) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "  %s: %.4f\n", name.c_str(), static_cast<double>(score));
    out += buf;
  }
  out += "seed: " + std::to_string(plan.seed) + "\n";
  out += "created_from: " + plan.created_from + "\n";
  return out;
}

}  // namespace plop
