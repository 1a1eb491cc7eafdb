#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plop/bundle.hpp"
#include "plop/cli_ops.hpp"
#include "plop/map_export.hpp"
#include "plop/placement.hpp"
#include "plop/rng.hpp"
#include "plop/tensor.hpp"

using namespace plop;
using namespace plop::cli;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path fresh_dir(const char* leaf) {
  fs::path p = fs::temp_directory_path() / "plopkit_cli_tests" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("token files parse, skip comments, and name bad lines") {
  fs::path dir = fresh_dir("tokens");
  {
    std::ofstream f(dir / "good.txt");
    f << "1 2 3\n";
    f << "# a comment\n";
    f << "\n";
    f << "4 5\n";
  }
  auto rows = read_token_file((dir / "good.txt").string());
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == std::vector<int>{1, 2, 3});
  CHECK(rows[1] == std::vector<int>{4, 5});

  {
    std::ofstream f(dir / "bad.txt");
    f << "1 2\n";
    f << "3 potato 4\n";
  }
  CHECK_THROWS_WITH_AS(read_token_file((dir / "bad.txt").string()), doctest::Contains("2"),
                       std::runtime_error);
  CHECK_THROWS(read_token_file((dir / "absent.txt").string()));
}

TEST_CASE("capture, score, plan and map chain end to end") {
  fs::path dir = fresh_dir("pipeline");
  RunConfig cfg;
  cfg.output_dir = dir.string();
  cfg.model.vocab = 16;
  cfg.model.d_model = 32;
  cfg.model.n_heads = 4;
  cfg.model.d_mlp = 64;
  cfg.model.n_layers = 2;
  cfg.model.max_seq = 16;
  cfg.model.seed = 5;
  cfg.batch = 4;
  cfg.seqlen = 12;
  cfg.data_seed = 9;
  std::ostringstream log;
  cmd_capture(cfg, log);
  CHECK(fs::exists(dir / "weights.manifest.json"));
  CHECK(fs::exists(dir / "weights.bin"));
  CHECK(fs::exists(dir / "activations.manifest.json"));
  CHECK(fs::exists(dir / "activations.bin"));

  cfg.weights_path = (dir / "weights.manifest.json").string();
  cfg.activations_path = (dir / "activations.manifest.json").string();
  cfg.seed = 3;
  cmd_score(cfg, log);
  json scores = json::parse(slurp(dir / "scores.json"));
  CHECK(scores["convention"] == "squared");
  CHECK(scores["m"] == 4);
  CHECK(scores["modules"].size() == 14);
  CHECK(scores["types"].size() == 7);
  CHECK(!scores.contains("workers"));
  CHECK(fs::exists(dir / "scores_by_type.txt"));

  cfg.scores_path = (dir / "scores.json").string();
  cmd_plan(cfg, log);
  PlacementPlan plan = plan_from_json(slurp(dir / "plan.json"));
  CHECK(plan.target_modules.size() == 3);
  CHECK(plan.rank == 16);
  CHECK(plan.alpha == 32);
  CHECK(plan.created_from == "scores.json");  // basename only, never a path

  cmd_map(cfg, log);
  NFNMap map = map_from_csv(slurp(dir / "nfn_map.csv"));
  CHECK(map.layers == std::vector<int>{0, 1});
  CHECK(slurp(dir / "nfn_map.svg").rfind("<svg", 0) == 0);
  CHECK(!slurp(dir / "nfn_map.txt").empty());
}

TEST_CASE("token files replace the generated batch") {
  fs::path dir = fresh_dir("tokensrun");
  {
    std::ofstream f(dir / "seqs.txt");
    f << "1 2 3 4 5 6\n";
    f << "2 10 2 11 4 12\n";
  }
  RunConfig cfg;
  cfg.output_dir = dir.string();
  cfg.model.vocab = 16;
  cfg.model.d_model = 16;
  cfg.model.n_heads = 2;
  cfg.model.d_mlp = 32;
  cfg.model.n_layers = 1;
  cfg.model.max_seq = 8;
  cfg.model.seed = 2;
  cfg.tokens_path = (dir / "seqs.txt").string();
  std::ostringstream log;
  cmd_capture(cfg, log);
  TensorBundle acts = read_bundle(dir / "activations.manifest.json");
  REQUIRE(!acts.entries.empty());
  // 2 sequences x 6 positions
  CHECK(acts.entries[0].data.rows == 12);
}

TEST_CASE("scoring an identity weight fixture lands on one") {
  fs::path dir = fresh_dir("identity");
  const int64_t n = 8;
  TensorBundle weights, acts;
  Rng r = Rng::stream(41, "test/cli_identity");
  const char* names[3] = {"layers.0.attn.q_proj", "layers.0.attn.k_proj",
                          "layers.0.mlp.down_proj"};
  for (const char* name : names) {
    BundleEntry w;
    w.name = name;
    w.kind = TensorKind::kWeight;
    w.data = Matrix(n, n);
    for (int64_t i = 0; i < n; ++i) w.data.at(i, i) = 1.0f;
    weights.entries.push_back(w);

    BundleEntry a;
    a.name = name;
    a.kind = TensorKind::kActivations;
    a.data = Matrix(6, n);
    for (auto& x : a.data.data) x = static_cast<float>(r.next_gaussian());
    acts.entries.push_back(a);
  }
  write_bundle(weights, dir / "weights");
  write_bundle(acts, dir / "activations");

  RunConfig cfg;
  cfg.output_dir = dir.string();
  cfg.weights_path = (dir / "weights.manifest.json").string();
  cfg.activations_path = (dir / "activations.manifest.json").string();
  cfg.seed = 4;
  std::ostringstream log;
  cmd_score(cfg, log);
  json scores = json::parse(slurp(dir / "scores.json"));
  for (const auto& m : scores["modules"]) {
    CHECK(m["score"].get<double>() == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(m["n_skipped"] == 0);
  }
}

TEST_CASE("score failures name every offender") {
  fs::path dir = fresh_dir("offenders");
  TensorBundle weights, acts;
  BundleEntry w;
  w.name = "layers.0.attn.q_proj";
  w.kind = TensorKind::kWeight;
  w.data = Matrix(4, 4);
  for (int64_t i = 0; i < 4; ++i) w.data.at(i, i) = 1.0f;
  weights.entries.push_back(w);

  BundleEntry a;
  a.name = "layers.0.attn.q_proj";
  a.kind = TensorKind::kActivations;
  a.data = Matrix(2, 4);
  a.data.at(0, 0) = 1.0f;
  a.data.at(1, 1) = 1.0f;
  acts.entries.push_back(a);
  // captured for a module the weights file never mentions
  BundleEntry orphan = a;
  orphan.name = "layers.0.attn.k_proj";
  acts.entries.push_back(orphan);
  write_bundle(weights, dir / "weights");
  write_bundle(acts, dir / "activations");

  RunConfig cfg;
  cfg.output_dir = dir.string();
  cfg.weights_path = (dir / "weights.manifest.json").string();
  cfg.activations_path = (dir / "activations.manifest.json").string();
  std::ostringstream log;
  CHECK_THROWS_WITH_AS(cmd_score(cfg, log), doctest::Contains("k_proj"), std::runtime_error);
}

TEST_CASE("module aggregation accepts names no type resolves") {
  fs::path dir = fresh_dir("moduleagg");
  TensorBundle weights, acts;
  BundleEntry w;
  w.name = "mystery";
  w.kind = TensorKind::kWeight;
  w.data = Matrix(4, 4);
  for (int64_t i = 0; i < 4; ++i) w.data.at(i, i) = 1.0f;
  weights.entries.push_back(w);
  BundleEntry a;
  a.name = "mystery";
  a.kind = TensorKind::kActivations;
  a.data = Matrix(3, 4);
  a.data.at(0, 0) = 1.0f;
  a.data.at(1, 1) = 1.0f;
  a.data.at(2, 2) = 1.0f;
  acts.entries.push_back(a);
  write_bundle(weights, dir / "weights");
  write_bundle(acts, dir / "activations");

  RunConfig cfg;
  cfg.output_dir = dir.string();
  cfg.weights_path = (dir / "weights.manifest.json").string();
  cfg.activations_path = (dir / "activations.manifest.json").string();
  cfg.aggregation = "module";
  std::ostringstream log;
  cmd_score(cfg, log);
  json scores = json::parse(slurp(dir / "scores.json"));
  CHECK(scores["modules"].size() == 1);
  CHECK(!scores.contains("types"));
  CHECK(!fs::exists(dir / "scores_by_type.txt"));
}

TEST_CASE("lab theorem1 with explicit steps skips the window estimate") {
  fs::path dir = fresh_dir("labt1");
  RunConfig cfg;
  cfg.output_dir = dir.string();
  cfg.experiment = "theorem1";
  cfg.lab_net.d = 16;
  cfg.lab_net.n = 256;
  cfg.lab_net.depth = 2;
  cfg.lab_net.train_layer = 1;
  cfg.lab_net.eta = 0.01;
  cfg.lab_steps = 30;
  cfg.seed = 12;
  std::ostringstream log;
  cmd_lab(cfg, log);
  json summary = json::parse(slurp(dir / "theorem1_summary.json"));
  CHECK(summary["steps"] == 30);
  CHECK(!summary.contains("estimated_window"));
  CHECK(summary["pass_gamma_identity"] == true);
  CHECK(summary["pass_alpha_identity"] == true);
  CHECK(summary["pass"] == true);
  std::string csv = slurp(dir / "theorem1_trajectory.csv");
  size_t lines = 0;
  for (char ch : csv)
    if (ch == '\n') ++lines;
  CHECK(lines == 32);  // header plus steps+1 rows
}

TEST_CASE("lab rejects unknown experiments") {
  RunConfig cfg;
  cfg.output_dir = fresh_dir("labbad").string();
  cfg.experiment = "seance";
  std::ostringstream log;
  CHECK_THROWS(cmd_lab(cfg, log));
}
