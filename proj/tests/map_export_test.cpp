#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "plop/map_export.hpp"
#include "plop/nfn.hpp"
#include "plop/placement.hpp"

using namespace plop;

namespace {

NFNScore score_named(const std::string& name, float score) {
  NFNScore s;
  s.module_name = name;
  s.score = score;
  s.n_samples = 4;
  s.m_baseline_draws = 4;
  return s;
}

}  // namespace

TEST_CASE("scores fold into a layer by type grid") {
  std::vector<NFNScore> scores;
  scores.push_back(score_named("layers.1.attn.q_proj", 2.0f));
  scores.push_back(score_named("layers.0.attn.q_proj", 1.0f));
  scores.push_back(score_named("layers.0.mlp.down_proj", 3.0f));
  NFNMap m = map_from_scores(scores);
  REQUIRE(m.layers.size() == 2);
  CHECK(m.layers[0] == 0);  // ascending regardless of input order
  CHECK(m.layers[1] == 1);
  CHECK(m.cell(0, ModuleType::kQuery) == 1.0f);
  CHECK(m.cell(1, ModuleType::kQuery) == 2.0f);
  CHECK(m.cell(0, ModuleType::kDownProj) == 3.0f);
  CHECK(std::isnan(m.cell(0, ModuleType::kKey)));
  CHECK(std::isnan(m.cell(1, ModuleType::kDownProj)));
}

TEST_CASE("modules sharing a cell are averaged") {
  std::vector<NFNScore> scores;
  scores.push_back(score_named("layers.0.self_attn.q_proj", 1.0f));
  scores.push_back(score_named("layers.0.cross_attn.q_proj", 3.0f));
  NFNMap m = map_from_scores(scores);
  CHECK(m.cell(0, ModuleType::kQuery) == doctest::Approx(2.0f));
}

TEST_CASE("unmappable modules are an error") {
  CHECK_THROWS_WITH_AS(map_from_scores({score_named("layers.0.attn.mystery", 1.0f)}),
                       doctest::Contains("mystery"), std::invalid_argument);
  // resolvable type, no layer index
  CHECK_THROWS(map_from_scores({score_named("standalone.q_proj", 1.0f)}));
}

TEST_CASE("csv round trips including empty cells") {
  NFNMap m;
  m.layers = {0, 1};
  m.cells.assign(14, 1.0f);
  m.set_cell(0, ModuleType::kKey, 2.5f);
  m.set_cell(1, ModuleType::kDownProj, std::nanf(""));
  std::string csv = map_to_csv(m);
  CHECK(csv.rfind("layer,q_proj,k_proj,v_proj,o_proj,gate_proj,up_proj,down_proj\n", 0) == 0);
  NFNMap back = map_from_csv(csv);
  REQUIRE(back.layers == m.layers);
  CHECK(back.cell(0, ModuleType::kKey) == 2.5f);
  CHECK(back.cell(0, ModuleType::kQuery) == 1.0f);
  CHECK(std::isnan(back.cell(1, ModuleType::kDownProj)));
}

TEST_CASE("csv parsing rejects malformed input") {
  CHECK_THROWS(map_from_csv("wrong,header\n1,2\n"));
  CHECK_THROWS(map_from_csv("layer,q_proj,k_proj,v_proj,o_proj,gate_proj,up_proj,down_proj\n"
                            "0,1,2\n"));
  CHECK_THROWS(map_from_csv("layer,q_proj,k_proj,v_proj,o_proj,gate_proj,up_proj,down_proj\n"
                            "0,1,2,3,4,5,six,7\n"));
}

TEST_CASE("svg output is deterministic and self contained") {
  NFNMap m;
  m.layers = {0, 1, 2};
  m.cells.assign(21, 0.0f);
  for (size_t i = 0; i < m.cells.size(); ++i) m.cells[i] = 0.5f + 0.1f * static_cast<float>(i);
  m.set_cell(2, ModuleType::kUpProj, std::nanf(""));
  std::string a = map_to_svg(m);
  std::string b = map_to_svg(m);
  CHECK(a == b);
  CHECK(a.rfind("<svg", 0) == 0);
  CHECK(a.find("</svg>") != std::string::npos);
  CHECK(a.find("q_proj") != std::string::npos);
}

TEST_CASE("type score report prints the fixed block") {
  TypeScoreTable t;
  float vals[7] = {2.58f, 2.63f, 0.97f, 0.90f, 1.40f, 1.11f, 1.05f};
  for (int i = 0; i < 7; ++i) t.rows.push_back({static_cast<ModuleType>(i), vals[i], 4});
  std::string expect =
      "===========================\n"
      " NFN Scores by Module Type\n"
      "===========================\n"
      " q_proj: 2.58\n"
      " k_proj: 2.63\n"
      " v_proj: 0.97\n"
      " o_proj: 0.90\n"
      " gate_proj: 1.40\n"
      " down_proj: 1.05\n"
      " up_proj: 1.11\n";
  CHECK(type_scores_text(t) == expect);
}
