#include "plop/cli_ops.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "plop/bundle.hpp"
#include "plop/map_export.hpp"
#include "plop/placement.hpp"
#include "plop/safetensors.hpp"

namespace plop::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output dir '" + dir + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw std::runtime_error("short write to '" + path.string() + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("'" + path + "' is not valid JSON: " + e.what());
  }
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

TensorBundle load_weights_file(const std::string& path) {
  if (ends_with(path, ".safetensors")) return read_safetensors(path);
  return read_bundle(path);
}

// Per-module scores as parsed back from a scores.json "modules" array.
std::vector<NFNScore> scores_from_json(const json& j, const std::string& origin) {
  if (!j.contains("modules") || !j["modules"].is_array()) {
    throw std::runtime_error("'" + origin + "' has no \"modules\" array");
  }
  std::vector<NFNScore> out;
  for (const auto& e : j["modules"]) {
    if (!e.contains("module") || !e.contains("score")) {
      throw std::runtime_error("'" + origin + "' has a modules entry without module/score");
    }
    NFNScore s;
    s.module_name = e["module"].get<std::string>();
    s.score = e["score"].get<float>();
    s.n_samples = e.value("n_samples", int64_t{0});
    s.n_skipped = e.value("n_skipped", int64_t{0});
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error("'" + origin + "' lists no modules");
  return out;
}

TypeScoreTable table_from_json(const json& j, const std::string& origin) {
  if (j.contains("modules")) return aggregate_by_type(scores_from_json(j, origin));
  if (j.contains("types") && j["types"].is_object()) {
    TypeScoreTable table;
    for (ModuleType t : kCanonicalTypes) {
      const char* name = canonical_name(t);
      if (j["types"].contains(name)) {
        table.rows.push_back({t, j["types"][name].get<double>(), 1});
      }
    }
    if (table.rows.empty()) throw std::runtime_error("'" + origin + "' types table is empty");
    return table;
  }
  throw std::runtime_error("'" + origin + "' has neither \"modules\" nor \"types\"");
}

}  // namespace

std::vector<std::vector<int>> read_token_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read token file '" + path + "'");
  std::vector<std::vector<int>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::vector<int> row;
    std::string tok;
    while (ss >> tok) {
      try {
        size_t used = 0;
        int v = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        row.push_back(v);
      } catch (const std::exception&) {
        throw std::runtime_error("token file '" + path + "' line " + std::to_string(lineno) +
                                 ": '" + tok + "' is not an integer");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("token file '" + path + "' holds no sequences");
  return rows;
}

void cmd_score(const RunConfig& cfg, std::ostream& out) {
  if (cfg.weights_path.empty()) throw std::invalid_argument("score: --weights is required");
  if (cfg.activations_path.empty()) throw std::invalid_argument("score: --activations is required");
  if (cfg.aggregation != "type" && cfg.aggregation != "module") {
    throw std::invalid_argument("score: --aggregation must be 'type' or 'module'");
  }
  ensure_dir(cfg.output_dir);

  TensorBundle weights = load_weights_file(cfg.weights_path);
  TensorBundle acts = read_bundle(cfg.activations_path);

  std::vector<ActivationBatch> batches;
  for (const auto& e : acts.entries) {
    if (e.kind != TensorKind::kActivations) continue;
    ActivationBatch b;
    b.module_name = e.name;
    b.inputs.reserve(static_cast<size_t>(e.data.rows));
    for (int64_t i = 0; i < e.data.rows; ++i) {
      Vector z(e.data.cols);
      for (int64_t j = 0; j < e.data.cols; ++j) z[j] = e.data.at(i, j);
      b.inputs.push_back(std::move(z));
    }
    batches.push_back(std::move(b));
  }
  if (batches.empty()) {
    throw std::runtime_error("'" + cfg.activations_path + "' holds no activation entries");
  }

  std::vector<const Matrix*> ws;
  std::vector<const ActivationBatch*> bs;
  std::string missing, mismatched;
  for (const auto& b : batches) {
    const BundleEntry* w = weights.find(b.module_name);
    if (!w) {
      missing += missing.empty() ? b.module_name : ", " + b.module_name;
      continue;
    }
    if (!b.inputs.empty() && w->data.cols != b.inputs.front().size()) {
      mismatched += (mismatched.empty() ? "" : ", ") + b.module_name + " (weight cols " +
                    std::to_string(w->data.cols) + ", activation dim " +
                    std::to_string(b.inputs.front().size()) + ")";
      continue;
    }
    ws.push_back(&w->data);
    bs.push_back(&b);
  }
  if (!missing.empty()) {
    throw std::runtime_error("weights have no entry for activation modules: " + missing);
  }
  if (!mismatched.empty()) {
    throw std::runtime_error("weight/activation shape mismatch for: " + mismatched);
  }

  NfnOptions opts;
  opts.convention = cfg.convention;
  opts.m = cfg.m;
  std::vector<NFNScore> scores = score_modules(ws, bs, opts, cfg.seed, cfg.workers);

  json doc;
  doc["tool"] = "plopkit";
  doc["command"] = "score";
  doc["convention"] = convention_name(cfg.convention);
  doc["m"] = cfg.m;
  doc["seed"] = cfg.seed;
  doc["aggregation"] = cfg.aggregation;
  // the worker count is deliberately not echoed: results are independent of
  // it, and the file should be byte-identical for any pool size
  json mods = json::array();
  for (const auto& s : scores) {
    json e;
    e["module"] = s.module_name;
    e["score"] = s.score;
    e["n_samples"] = s.n_samples;
    e["n_skipped"] = s.n_skipped;
    mods.push_back(std::move(e));
  }
  doc["modules"] = std::move(mods);

  std::string block;
  if (cfg.aggregation == "type") {
    TypeScoreTable table = aggregate_by_type(scores);
    json types;
    for (const auto& row : table.rows) types[canonical_name(row.type)] = row.mean;
    doc["types"] = std::move(types);
    block = type_scores_text(table);
    write_text(fs::path(cfg.output_dir) / "scores_by_type.txt", block);
  }
  write_text(fs::path(cfg.output_dir) / "scores.json", doc.dump(2) + "\n");

  out << "scored " << scores.size() << " modules -> " << cfg.output_dir << "/scores.json\n";
  if (!block.empty()) out << block;
}

void cmd_plan(const RunConfig& cfg, std::ostream& out) {
  if (cfg.scores_path.empty()) throw std::invalid_argument("plan: --scores is required");
  ensure_dir(cfg.output_dir);

  json j = parse_json_file(cfg.scores_path);
  TypeScoreTable table = table_from_json(j, cfg.scores_path);
  // provenance keeps the basename only, so identical runs into different
  // directories stay byte-identical
  std::string from = fs::path(cfg.scores_path).filename().string();
  PlacementPlan plan = emit_plan(table, cfg.strategy, cfg.k, cfg.r, cfg.alpha, cfg.seed, from);

  std::string text = plan_to_json(plan);
  if (text.empty() || text.back() != '\n') text += '\n';
  write_text(fs::path(cfg.output_dir) / "plan.json", text);
  out << plan_to_text(plan);
}

void cmd_map(const RunConfig& cfg, std::ostream& out) {
  if (cfg.scores_path.empty()) throw std::invalid_argument("map: --scores is required");
  ensure_dir(cfg.output_dir);

  json j = parse_json_file(cfg.scores_path);
  std::vector<NFNScore> scores = scores_from_json(j, cfg.scores_path);
  NFNMap map = map_from_scores(scores);
  write_text(fs::path(cfg.output_dir) / "nfn_map.csv", map_to_csv(map));
  write_text(fs::path(cfg.output_dir) / "nfn_map.svg", map_to_svg(map));
  std::string block = type_scores_text(aggregate_by_type(scores));
  write_text(fs::path(cfg.output_dir) / "nfn_map.txt", block);

  out << "map: " << map.layers.size() << " layers x 7 types -> " << cfg.output_dir
      << "/nfn_map.{csv,svg,txt}\n";
  out << block;
}

void cmd_capture(const RunConfig& cfg, std::ostream& out) {
  ensure_dir(cfg.output_dir);
  toy::Transformer model = toy::init_transformer(cfg.model);

  std::vector<std::vector<int>> batch;
  if (!cfg.tokens_path.empty()) {
    batch = read_token_file(cfg.tokens_path);
  } else {
    toy::Task task;
    if (cfg.task == "arithmetic") {
      task = toy::Task::kArithmetic;
    } else if (cfg.task == "shuffled") {
      task = toy::Task::kShuffled;
    } else {
      throw std::invalid_argument("capture: --task must be 'arithmetic' or 'shuffled'");
    }
    batch = toy::sample_batch(task, cfg.batch, cfg.seqlen, cfg.data_seed, cfg.data_step);
  }

  std::vector<ActivationBatch> caps = toy::capture_inputs(model, batch);
  std::vector<toy::ModuleRef> mods = toy::list_modules(model);

  TensorBundle wb;
  for (const auto& mref : mods) {
    BundleEntry e;
    e.name = mref.name;
    e.kind = TensorKind::kWeight;
    e.data = *mref.weight;
    if (auto t = resolve_module_type(mref.name)) e.module_type = canonical_name(*t);
    e.layer = layer_from_name(mref.name);
    wb.entries.push_back(std::move(e));
  }
  std::string wdigest = write_bundle(wb, fs::path(cfg.output_dir) / "weights");

  TensorBundle ab;
  for (const auto& cap : caps) {
    BundleEntry e;
    e.name = cap.module_name;
    e.kind = TensorKind::kActivations;
    e.data = Matrix(static_cast<int64_t>(cap.inputs.size()), cap.inputs.front().size());
    for (size_t i = 0; i < cap.inputs.size(); ++i) {
      for (int64_t j = 0; j < cap.inputs[i].size(); ++j) {
        e.data.at(static_cast<int64_t>(i), j) = cap.inputs[i][j];
      }
    }
    if (auto t = resolve_module_type(cap.module_name)) e.module_type = canonical_name(*t);
    e.layer = layer_from_name(cap.module_name);
    ab.entries.push_back(std::move(e));
  }
  std::string adigest = write_bundle(ab, fs::path(cfg.output_dir) / "activations");

  out << "captured " << caps.size() << " modules over " << batch.size() << " sequences\n";
  out << "  weights     " << cfg.output_dir << "/weights.{manifest.json,bin}  digest " << wdigest
      << "\n";
  out << "  activations " << cfg.output_dir << "/activations.{manifest.json,bin}  digest "
      << adigest << "\n";
}

namespace {

json lab_net_echo(const lab::LinearNetConfig& c) {
  json j;
  j["n"] = c.n;
  j["d"] = c.d;
  j["depth"] = c.depth;
  j["train_layer"] = c.train_layer;
  j["eta"] = c.eta;
  j["seed"] = c.seed;
  return j;
}

void lab_theorem1(const RunConfig& cfg, std::ostream& out) {
  lab::LinearNetConfig c = cfg.lab_net;
  c.seed = cfg.seed;
  int window = -1;
  if (cfg.lab_steps > 0) {
    c.steps = cfg.lab_steps;
  } else {
    window = lab::estimate_sign_window(c, cfg.trials).window;
    c.steps = std::max(1, window / 2);  // stay safely inside the window
  }
  lab::SingleLayerRun run = lab::run_theorem1(c);

  write_text(fs::path(cfg.output_dir) / "theorem1_trajectory.csv",
             lab::trajectory_csv(run.trajectory));

  // tolerances match the acceptance suite: the gamma identity is algebraic up
  // to accumulated rounding, the alpha identity is exact in double
  bool ok_gamma = run.max_gamma_identity_err <= 1e-6;
  bool ok_alpha = run.max_alpha_identity_err <= 1e-9;
  bool ok_fit = run.r2_quadratic >= 0.99;
  json doc;
  doc["experiment"] = "theorem1";
  doc["net"] = lab_net_echo(c);
  doc["steps"] = c.steps;
  if (window >= 0) doc["estimated_window"] = window;
  doc["beta"] = run.beta;
  doc["yhat"] = run.yhat;
  doc["gamma0"] = run.gamma0;
  doc["gamma_growth"] = run.gamma_growth;
  doc["sup_dev_recursion"] = run.sup_dev_recursion;
  doc["sup_dev_statement"] = run.sup_dev_statement;
  doc["r2_quadratic"] = run.r2_quadratic;
  doc["max_gamma_identity_err"] = run.max_gamma_identity_err;
  doc["max_alpha_identity_err"] = run.max_alpha_identity_err;
  doc["sign_constant"] = run.sign_constant;
  doc["pass_gamma_identity"] = ok_gamma;
  doc["pass_alpha_identity"] = ok_alpha;
  doc["pass_quadratic_fit"] = ok_fit;
  doc["pass"] = ok_gamma && ok_alpha && ok_fit;
  write_text(fs::path(cfg.output_dir) / "theorem1_summary.json", doc.dump(2) + "\n");

  out << "theorem1: steps " << c.steps << "  R2 " << run.r2_quadratic << "  sup dev "
      << run.sup_dev_recursion << " (recursion) " << run.sup_dev_statement << " (statement)  "
      << (doc["pass"].get<bool>() ? "pass" : "FAIL") << "\n";
}

void lab_signconst(const RunConfig& cfg, std::ostream& out) {
  lab::LinearNetConfig c = cfg.lab_net;
  c.seed = cfg.seed;
  lab::SignWindow win = lab::estimate_sign_window(c, cfg.trials);
  c.steps = cfg.lab_steps > 0 ? cfg.lab_steps : std::max(1, win.window / 2);
  double fraction = lab::run_sign_constancy(c, cfg.trials);

  std::string csv = "trial,flip_step\n";
  for (size_t i = 0; i < win.flip_steps.size(); ++i) {
    csv += std::to_string(i) + "," + std::to_string(win.flip_steps[i]) + "\n";
  }
  write_text(fs::path(cfg.output_dir) / "signconst_flips.csv", csv);

  bool ok = fraction >= 0.95;
  json doc;
  doc["experiment"] = "signconst";
  doc["net"] = lab_net_echo(c);
  doc["trials"] = cfg.trials;
  doc["estimated_window"] = win.window;
  doc["lambda_hat"] = win.lambda_hat;
  doc["steps"] = c.steps;
  doc["fraction_constant"] = fraction;
  doc["pass"] = ok;
  write_text(fs::path(cfg.output_dir) / "signconst_summary.json", doc.dump(2) + "\n");

  out << "signconst: window " << win.window << "  T " << c.steps << "  fraction " << fraction
      << "  " << (ok ? "pass" : "FAIL") << "\n";
}

void lab_baseline(const RunConfig& cfg, std::ostream& out) {
  lab::LinearNetConfig c = cfg.lab_net;
  c.seed = cfg.seed;
  int window = -1;
  if (cfg.lab_steps > 0) {
    c.steps = cfg.lab_steps;
  } else {
    window = lab::estimate_sign_window(c, cfg.trials).window;
    c.steps = std::max(1, window / 2);
  }
  lab::SingleLayerRun run = lab::run_theorem1(c);

  write_text(fs::path(cfg.output_dir) / "baseline_trajectory.csv",
             lab::trajectory_csv(run.trajectory));

  double flat_bound = 10.0 / std::sqrt(static_cast<double>(c.n)) * run.gamma0_baseline;
  bool ok_flat = run.baseline_drift <= flat_bound;
  bool ok_growth = run.gamma_growth >= 10.0 * run.baseline_drift;
  json doc;
  doc["experiment"] = "baseline";
  doc["net"] = lab_net_echo(c);
  doc["steps"] = c.steps;
  if (window >= 0) doc["estimated_window"] = window;
  doc["gamma0"] = run.gamma0;
  doc["gamma0_baseline"] = run.gamma0_baseline;
  doc["gamma_growth"] = run.gamma_growth;
  doc["baseline_drift"] = run.baseline_drift;
  doc["flat_bound"] = flat_bound;
  doc["pass_flat"] = ok_flat;
  doc["pass_growth_dominates"] = ok_growth;
  doc["pass"] = ok_flat && ok_growth;
  write_text(fs::path(cfg.output_dir) / "baseline_summary.json", doc.dump(2) + "\n");

  out << "baseline: drift " << run.baseline_drift << " vs bound " << flat_bound << ", growth "
      << run.gamma_growth << "  " << (doc["pass"].get<bool>() ? "pass" : "FAIL") << "\n";
}

void lab_fig3(const RunConfig& cfg, std::ostream& out) {
  lab::Fig3Config f = cfg.fig3;
  f.seed = cfg.seed;
  lab::Fig3Result res = lab::run_fig3(f);

  size_t T = res.loss.size() - 1;
  for (int l = 0; l < 3; ++l) {
    std::string csv = "step,gamma,gamma_baseline,loss\n";
    char buf[128];
    for (size_t t = 0; t <= T; ++t) {
      std::snprintf(buf, sizeof buf, "%zu,%.12g,%.12g,%.12g\n", t,
                    res.gamma[static_cast<size_t>(l)][t],
                    res.gamma_baseline[static_cast<size_t>(l)][t], res.loss[t]);
      csv += buf;
    }
    write_text(fs::path(cfg.output_dir) / ("fig3_layer" + std::to_string(l) + ".csv"), csv);
  }

  size_t milestone = std::min<size_t>(200, T);
  json layers = json::array();
  bool all_grow = true, front_loaded = true;
  double rel[3] = {0, 0, 0};
  double hidden_base_dev = 0.0, readout_base_dev = 0.0;
  for (int l = 0; l < 3; ++l) {
    const auto& g = res.gamma[static_cast<size_t>(l)];
    const auto& gb = res.gamma_baseline[static_cast<size_t>(l)];
    double growth = g[T] - g[0];
    rel[l] = growth / g[0];
    double frac200 = growth != 0.0 ? (g[milestone] - g[0]) / growth : 0.0;
    double bdev = 0.0;
    for (double v : gb) bdev = std::max(bdev, std::fabs(v - gb[0]) / gb[0]);
    all_grow = all_grow && growth > 0.0;
    front_loaded = front_loaded && frac200 >= 0.80;
    if (l < 2) {
      hidden_base_dev = std::max(hidden_base_dev, bdev);
    } else {
      readout_base_dev = bdev;
    }
    json e;
    e["layer"] = l;
    e["gamma_start"] = g[0];
    e["gamma_end"] = g[T];
    e["growth_rel"] = rel[l];
    e["growth_frac_by_milestone"] = frac200;
    e["baseline_max_rel_dev"] = bdev;
    layers.push_back(std::move(e));
  }
  // The flatness claim is for the hidden layers. The readout is a single row
  // whose norm itself grows, so any fixed direction sees that growth; its
  // deviation is reported but not gated on.
  bool ok_flat = hidden_base_dev <= 0.10;
  bool ok_depth = rel[0] < rel[2];
  json doc;
  doc["experiment"] = "fig3";
  doc["n"] = f.n;
  doc["d"] = f.d;
  doc["n_data"] = f.n_data;
  doc["steps"] = f.steps;
  doc["probes"] = f.probes;
  doc["baseline_dirs"] = f.baseline_dirs;
  doc["noise_var"] = f.noise_var;
  doc["seed"] = f.seed;
  doc["lr"] = f.adam.lr;
  doc["milestone_step"] = milestone;
  doc["loss_initial"] = res.loss[0];
  doc["loss_final"] = res.loss[T];
  doc["layers"] = std::move(layers);
  doc["readout_baseline_rel_dev"] = readout_base_dev;
  doc["pass_all_layers_grow"] = all_grow;
  doc["pass_hidden_baselines_flat"] = ok_flat;
  doc["pass_front_loaded"] = front_loaded;
  doc["pass_depth_ordering"] = ok_depth;
  doc["pass"] = all_grow && ok_flat && front_loaded && ok_depth;
  write_text(fs::path(cfg.output_dir) / "fig3_summary.json", doc.dump(2) + "\n");

  out << "fig3: loss " << res.loss[0] << " -> " << res.loss[T] << ", growth rel ["
      << rel[0] << ", " << rel[1] << ", " << rel[2] << "]  "
      << (doc["pass"].get<bool>() ? "pass" : "FAIL") << "\n";
}

}  // namespace

void cmd_lab(const RunConfig& cfg, std::ostream& out) {
  ensure_dir(cfg.output_dir);
  if (cfg.experiment == "theorem1") {
    lab_theorem1(cfg, out);
  } else if (cfg.experiment == "signconst") {
    lab_signconst(cfg, out);
  } else if (cfg.experiment == "baseline") {
    lab_baseline(cfg, out);
  } else if (cfg.experiment == "fig3") {
    lab_fig3(cfg, out);
  } else {
    throw std::invalid_argument(
        "lab: experiment must be one of theorem1, signconst, baseline, fig3");
  }
}

}  // namespace plop::cli
