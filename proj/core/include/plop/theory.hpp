#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "plop/rng.hpp"

// Training-dynamics lab: deep linear chains trained with SignSGD on a single
// layer, plus a small three-layer Adam experiment. Everything here runs in
// double precision; the scalar recursions the checks lean on do not survive
// f32 rounding.
namespace plop::lab {

using Vec64 = std::vector<double>;

struct Mat64 {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> data;

  Mat64() = default;
  Mat64(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), 0.0) {}

  double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols + j)]; }
  double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols + j)]; }
};

Vec64 matvec64(const Mat64& a, const Vec64& x);

// Linear chain f(x) = W_L ... W_1 W_0 x with a single trainable layer.
// Widths: W_0 is n x d, hidden layers n x n, W_L is 1 x n.
struct LinearNetConfig {
  int d = 64;           // input dim
  int n = 1024;         // width
  int depth = 2;        // L; the chain holds depth+1 matrices
  int train_layer = 1;  // must sit strictly between input and output
  double eta = 0.01;    // applied as eta / n
  int steps = 64;       // T
  uint64_t seed = 0;
};

void validate(const LinearNetConfig& c);

// Mean-field init: input layer std d^-1/2, hidden layers std n^-1/2, output
// layer uniform on [-1/n, 1/n].
struct TrainState {
  LinearNetConfig config;
  std::vector<Mat64> weights;  // W_0 .. W_L
};

TrainState init_network(const LinearNetConfig& c);

struct TrajectoryRow {
  int64_t step = 0;
  double gamma = 0.0;           // n^-1 ||W_t z_in||^2
  double gamma_baseline = 0.0;  // same for the frozen random direction (NaN if none)
  double big_gamma_recursion = 0.0;
  double big_gamma_statement = 0.0;
  int chi = 0;  // sign of the residual at this step
  double alpha = 0.0;  // <W_t z_in, S(v)>
};

struct Trajectory {
  std::vector<TrajectoryRow> rows;  // steps + 1 of them
};

// step,gamma,gamma_baseline,Gamma_recursion,Gamma_statement,chi,alpha
std::string trajectory_csv(const Trajectory& t);

// Predicted feature-norm envelope. The recursion form is the unrolled
// Gamma_{t+1} = Gamma_t + beta^2 (1 + 2t); the statement form is the
// quoted closed form, which disagrees with it from t=2 on. Both return
// Gamma_0 at t=0. Simulation tracks the recursion form.
enum class GammaForm { kRecursion, kStatement };
double gamma_prediction(int64_t t, double gamma0, double beta, GammaForm form);

// One rank-one SignSGD step on the trainable layer:
//   W <- W - (eta/n) chi S(v) S(z_in)^T,  chi = sign(v^T W z_in - yhat).
// Returns chi.
int signsgd_single_layer_step(TrainState& s, const Vec64& z_in, double yhat);

struct SingleLayerRun {
  Trajectory trajectory;
  double beta = 0.0;  // eta n^-1 ||z_in||_1
  double yhat = 0.0;
  double gamma0 = 0.0;
  double gamma0_baseline = 0.0;
  double gamma_growth = 0.0;    // gamma_T - gamma_0
  double baseline_drift = 0.0;  // max_t |gamma~_t - gamma~_0|
  double sup_dev_recursion = 0.0;
  double sup_dev_statement = 0.0;
  double r2_quadratic = 0.0;  // least-squares quadratic fit of gamma_t
  bool sign_constant = true;
  // Residuals of the two step identities, maxed over the run:
  //   gamma_{t+1} - gamma_t == beta^2 - 2 beta chi_t n^-1 alpha_t
  //   alpha_{t+1} == alpha_t - beta chi_t n
  double max_gamma_identity_err = 0.0;
  double max_alpha_identity_err = 0.0;
  Vec64 z_in;
};

// Runs config.steps updates on a freshly initialized chain. The input x, the
// target (|yhat| uniform in [0.5, 1.5], random sign) and the baseline
// direction (gaussian, rescaled to ||z_in||) come from substreams of
// config.seed. The overload injects the baseline direction instead; an empty
// one skips baseline tracking.
SingleLayerRun run_theorem1(const LinearNetConfig& c);
SingleLayerRun run_theorem1(const LinearNetConfig& c, const Vec64& baseline_dir);

// In-place variant exposing the mutated state to the caller.
SingleLayerRun run_single_layer(TrainState& s, const Vec64& z_in, double yhat,
                                const Vec64& baseline_dir, int steps);

struct SignWindow {
  int window = 0;          // largest T over which >= 95% of trials hold sign
  double lambda_hat = 0.0; // window * eta, the theorem's unnamed constant
  std::vector<int> flip_steps;  // per trial, capped at max_steps
};

// Estimates the constant-sign window from the exact scalar reduction of the
// dynamics (u_{t+1} = u_t - beta ||v||_1 chi_t), one fresh chain per trial.
// max_steps <= 0 picks ceil(10 / eta).
SignWindow estimate_sign_window(const LinearNetConfig& c, int n_trials, int max_steps = 0);

// Fraction of fully materialized trials keeping chi_t == chi_0 through
// config.steps. Trials draw their own chains, inputs and targets.
double run_sign_constancy(const LinearNetConfig& c, int n_trials);

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected Adam. t counts updates and starts at 1; m and v
// must be zero-initialized to w's shape.
void adam_step(Mat64& w, const Mat64& grad, Mat64& m, Mat64& v, int64_t t, const AdamParams& p);

// One batched SignSGD step in its rank-one form. The sign matrix of the
// summed gradient factorizes as S(v) S(sum_b r_b z_b)^T, so the feature
// change of any probe is a single inner product.
Vec64 batch_feature_update_probe(const std::vector<Vec64>& batch_z, const Vec64& residuals,
                                 const Vec64& v, const Vec64& probe, double eta);

enum class OmegaScale { kInvSqrtD, kInvD };

struct Fig3Config {
  int n = 100;
  int d = 100;
  int n_data = 1000;
  int steps = 300;
  int probes = 200;         // training inputs reused as feature probes
  int baseline_dirs = 16;   // fixed random directions averaged per layer
  double noise_var = 0.025;
  OmegaScale omega = OmegaScale::kInvSqrtD;
  AdamParams adam;
  uint64_t seed = 0;
};

// Three-layer chain, all layers trained jointly with full-batch Adam on
// y = omega^T x + eps. gamma[l][t] is the width-normalized mean squared
// output norm of layer l over the probe set at step t; the baseline series
// uses directions frozen at t=0 and norm-matched to the layer's mean initial
// input norm.
struct Fig3Result {
  std::array<std::vector<double>, 3> gamma;
  std::array<std::vector<double>, 3> gamma_baseline;
  std::vector<double> loss;
};

Fig3Result run_fig3(const Fig3Config& c);

}  // namespace plop::lab
