#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "plop/nfn.hpp"
#include "plop/theory.hpp"
#include "plop/transformer.hpp"

// The command implementations behind the plopkit binary. They live in the
// library so tests can drive them in-process; the binary only parses flags
// into a RunConfig and dispatches.
//
// Every command is deterministic given its config: fixed output filenames
// under output_dir, no timestamps, absolute paths never serialized. Flag
// defaults live in this struct and are echoed into each command's JSON
// output so results are self-describing.
namespace plop::cli {

struct RunConfig {
  std::string command;

  // shared
  std::string output_dir = "plop_out";
  uint64_t seed = 0;
  int workers = 1;

  // score
  std::string weights_path;      // .safetensors or bundle prefix/manifest
  std::string activations_path;  // bundle prefix/manifest
  int m = 4;
  NfnConvention convention = NfnConvention::kSquared;
  std::string aggregation = "type";  // "module" skips type resolution

  // plan + map
  std::string scores_path;  // scores.json written by `score`
  std::string strategy = "plop";
  int k = 3;
  int r = 16;
  int alpha = 0;  // 0 keeps the 2*r default

  // capture
  toy::TransformerConfig model;
  std::string task = "arithmetic";  // or "shuffled"
  std::string tokens_path;          // when set, replaces task generation
  int batch = 8;
  int seqlen = 32;
  uint64_t data_seed = 0;
  int64_t data_step = 0;

  // lab
  std::string experiment;  // theorem1 | signconst | baseline | fig3
  lab::LinearNetConfig lab_net;
  int trials = 100;
  int lab_steps = 0;  // 0 estimates the constant-sign window first
  lab::Fig3Config fig3;
};

// Writes scores.json (per-module) and, under type aggregation, the
// scores_by_type.txt block, echoed to `out`. Module names in the activations
// bundle must resolve against the weights; unresolved names are listed in
// the error.
void cmd_score(const RunConfig& cfg, std::ostream& out);

// Reads scores.json, aggregates by type and writes plan.json for the chosen
// strategy.
void cmd_plan(const RunConfig& cfg, std::ostream& out);

// Reads scores.json and writes the layer-by-type grid as nfn_map.csv,
// nfn_map.svg and nfn_map.txt.
void cmd_map(const RunConfig& cfg, std::ostream& out);

// Builds the toy transformer from cfg.model, runs one captured forward over
// the token batch and writes weights.* and activations.* bundles.
void cmd_capture(const RunConfig& cfg, std::ostream& out);

// Runs one lab experiment; writes <experiment>_trajectory.csv (fig3: one CSV
// per layer) and <experiment>_summary.json with pass/fail fields.
void cmd_lab(const RunConfig& cfg, std::ostream& out);

// Token file format for cmd_capture: one sequence per line, whitespace
// separated integer ids; blank lines and lines starting with '#' skipped.
std::vector<std::vector<int>> read_token_file(const std::string& path);

}  // namespace plop::cli
