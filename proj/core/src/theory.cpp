#include "plop/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace plop::lab {

namespace {

// Signs at exact zero take +1, here and in the batched sign matrix.
double sign64(double x) { return x >= 0.0 ? 1.0 : -1.0; }

double dot64(const Vec64& a, const Vec64& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double sqnorm64(const Vec64& v) { return dot64(v, v); }

double l1norm64(const Vec64& v) {
  double acc = 0.0;
  for (double x : v) acc += std::fabs(x);
  return acc;
}

Vec64 gaussian_vec64(Rng& rng, int64_t dim, double scale) {
  Vec64 v(static_cast<size_t>(dim));
  for (auto& x : v) x = rng.next_gaussian() * scale;
  return v;
}

// Row vector r W for the frozen-layer products above the trainable layer.
Vec64 vecmat64(const Vec64& r, const Mat64& m) {
  if (static_cast<int64_t>(r.size()) != m.rows) {
    throw std::invalid_argument("vecmat64: " + std::to_string(r.size()) + " vs " +
                                std::to_string(m.rows) + " rows");
  }
  Vec64 out(static_cast<size_t>(m.cols), 0.0);
  for (int64_t i = 0; i < m.rows; ++i) {
    double ri = r[static_cast<size_t>(i)];
    const double* row = m.data.data() + i * m.cols;
    for (int64_t j = 0; j < m.cols; ++j) out[static_cast<size_t>(j)] += ri * row[j];
  }
  return out;
}

bool solve3(double a[3][3], double b[3], double out[3]) {
  int idx[3] = {0, 1, 2};
  for (int col = 0; col < 3; ++col) {
    int best = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::fabs(a[idx[r]][col]) > std::fabs(a[idx[best]][col])) best = r;
    }
    std::swap(idx[col], idx[best]);
    double piv = a[idx[col]][col];
    if (piv == 0.0) return false;
    for (int r = col + 1; r < 3; ++r) {
      double f = a[idx[r]][col] / piv;
      for (int c = col; c < 3; ++c) a[idx[r]][c] -= f * a[idx[col]][c];
      b[idx[r]] -= f * b[idx[col]];
    }
  }
  for (int col = 2; col >= 0; --col) {
    double acc = b[idx[col]];
    for (int c = col + 1; c < 3; ++c) acc -= a[idx[col]][c] * out[c];
    out[col] = acc / a[idx[col]][col];
  }
  return true;
}

// R^2 of the least-squares quadratic through (t, gamma), fit in t/T to keep
// the normal equations conditioned.
double quadratic_r2(const std::vector<TrajectoryRow>& rows) {
  size_t n = rows.size();
  if (n < 4) return 1.0;  // <= 3 points: a quadratic is exact
  double tmax = static_cast<double>(rows.back().step);
  double s[5] = {0, 0, 0, 0, 0};
  double b[3] = {0, 0, 0};
  for (const auto& r : rows) {
    double t = static_cast<double>(r.step) / tmax;
    double p = 1.0;
    for (int k = 0; k < 5; ++k) {
      s[k] += p;
      if (k < 3) b[k] += r.gamma * p;
      p *= t;
    }
  }
  double a[3][3] = {{s[0], s[1], s[2]}, {s[1], s[2], s[3]}, {s[2], s[3], s[4]}};
  double coef[3];
  if (!solve3(a, b, coef)) return 0.0;
  double mean = 0.0;
  for (const auto& r : rows) mean += r.gamma;
  mean /= static_cast<double>(n);
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& r : rows) {
    double t = static_cast<double>(r.step) / tmax;
    double fit = coef[0] + coef[1] * t + coef[2] * t * t;
    ss_res += (r.gamma - fit) * (r.gamma - fit);
    ss_tot += (r.gamma - mean) * (r.gamma - mean);
  }
  if (ss_tot == 0.0) return 1.0;
  return 1.0 - ss_res / ss_tot;
}

}  // namespace

Vec64 matvec64(const Mat64& a, const Vec64& x) {
  if (static_cast<int64_t>(x.size()) != a.cols) {
    throw std::invalid_argument("matvec64: vector of size " + std::to_string(x.size()) +
                                " against " + std::to_string(a.cols) + " columns");
  }
  Vec64 y(static_cast<size_t>(a.rows));
  for (int64_t i = 0; i < a.rows; ++i) {
    const double* row = a.data.data() + i * a.cols;
    double acc = 0.0;
    for (int64_t j = 0; j < a.cols; ++j) acc += row[j] * x[static_cast<size_t>(j)];
    y[static_cast<size_t>(i)] = acc;
  }
  return y;
}

void validate(const LinearNetConfig& c) {
  if (c.d < 1 || c.n < 1) {
    throw std::invalid_argument("LinearNetConfig: dims must be positive, got d=" +
                                std::to_string(c.d) + " n=" + std::to_string(c.n));
  }
  if (c.depth < 2) {
    throw std::invalid_argument("LinearNetConfig: depth " + std::to_string(c.depth) +
                                " leaves no hidden layer to train");
  }
  if (c.train_layer < 1 || c.train_layer > c.depth - 1) {
    throw std::invalid_argument("LinearNetConfig: train_layer " + std::to_string(c.train_layer) +
                                " outside [1, " + std::to_string(c.depth - 1) + "]");
  }
  if (!(c.eta > 0.0)) throw std::invalid_argument("LinearNetConfig: eta must be positive");
  if (c.steps < 0) throw std::invalid_argument("LinearNetConfig: negative step count");
}

TrainState init_network(const LinearNetConfig& c) {
  validate(c);
  TrainState s;
  s.config = c;
  for (int l = 0; l <= c.depth; ++l) {
    int64_t rows = (l == c.depth) ? 1 : c.n;
    int64_t cols = (l == 0) ? c.d : c.n;
    Mat64 w(rows, cols);
    Rng rng = Rng::stream(c.seed, "lab/W", l);
    if (l == c.depth) {
      double lim = 1.0 / static_cast<double>(c.n);
      for (auto& x : w.data) x = rng.next_uniform(-lim, lim);
    } else {
      double scale = 1.0 / std::sqrt(static_cast<double>(l == 0 ? c.d : c.n));
      for (auto& x : w.data) x = rng.next_gaussian() * scale;
    }
    s.weights.push_back(std::move(w));
  }
  return s;
}

std::string trajectory_csv(const Trajectory& t) {
  std::string out = "step,gamma,gamma_baseline,Gamma_recursion,Gamma_statement,chi,alpha\n";
  char buf[256];
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.12g,", static_cast<long long>(r.step), r.gamma);
    out += buf;
    if (!std::isnan(r.gamma_baseline)) {
      std::snprintf(buf, sizeof(buf), "%.12g", r.gamma_baseline);
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.12g,%.12g,%d,%.12g\n", r.big_gamma_recursion,
                  r.big_gamma_statement, r.chi, r.alpha);
    out += buf;
  }
  return out;
}

double gamma_prediction(int64_t t, double gamma0, double beta, GammaForm form) {
  if (t < 0) throw std::invalid_argument("gamma_prediction: negative step");
  if (t == 0) return gamma0;
  double td = static_cast<double>(t);
  if (form == GammaForm::kRecursion) return gamma0 + beta * beta * td * td;
  return gamma0 + beta * beta * (1.0 + td * (td - 1.0));
}

namespace {

struct Readout {
  Vec64 v;   // (W_L ... W_{l0+1})^T
  Vec64 sv;  // its sign pattern
};

Readout upper_readout(const TrainState& s) {
  const auto& c = s.config;
  Vec64 r(s.weights[static_cast<size_t>(c.depth)].data);  // 1 x n row
  for (int l = c.depth - 1; l > c.train_layer; --l) {
    r = vecmat64(r, s.weights[static_cast<size_t>(l)]);
  }
  Readout out;
  out.sv.resize(r.size());
  for (size_t i = 0; i < r.size(); ++i) out.sv[i] = sign64(r[i]);
  out.v = std::move(r);
  return out;
}

void apply_rank_one(Mat64& w, double step, const Vec64& sv, const Vec64& sz) {
  for (int64_t i = 0; i < w.rows; ++i) {
    double si = step * sv[static_cast<size_t>(i)];
    double* row = w.data.data() + i * w.cols;
    for (int64_t j = 0; j < w.cols; ++j) row[j] -= si * sz[static_cast<size_t>(j)];
  }
}

}  // namespace

int signsgd_single_layer_step(TrainState& s, const Vec64& z_in, double yhat) {
  const auto& c = s.config;
  Mat64& w = s.weights[static_cast<size_t>(c.train_layer)];
  if (static_cast<int64_t>(z_in.size()) != w.cols) {
    throw std::invalid_argument("signsgd_single_layer_step: z_in size " +
                                std::to_string(z_in.size()) + " vs " + std::to_string(w.cols) +
                                " columns");
  }
  Readout ro = upper_readout(s);
  Vec64 h = matvec64(w, z_in);
  double chi = sign64(dot64(ro.v, h) - yhat);
  Vec64 sz(z_in.size());
  for (size_t j = 0; j < z_in.size(); ++j) sz[j] = sign64(z_in[j]);
  apply_rank_one(w, c.eta / static_cast<double>(c.n) * chi, ro.sv, sz);
  return static_cast<int>(chi);
}

SingleLayerRun run_single_layer(TrainState& s, const Vec64& z_in, double yhat,
                                const Vec64& baseline_dir, int steps) {
  const auto& c = s.config;
  validate(c);
  Mat64& w = s.weights[static_cast<size_t>(c.train_layer)];
  if (static_cast<int64_t>(z_in.size()) != w.cols) {
    throw std::invalid_argument("run_single_layer: z_in size " + std::to_string(z_in.size()) +
                                " vs " + std::to_string(w.cols) + " columns");
  }
  bool with_baseline = !baseline_dir.empty();
  if (with_baseline && baseline_dir.size() != z_in.size()) {
    throw std::invalid_argument("run_single_layer: baseline size " +
                                std::to_string(baseline_dir.size()) + " vs z_in size " +
                                std::to_string(z_in.size()));
  }
  if (steps < 0) throw std::invalid_argument("run_single_layer: negative step count");

  Readout ro = upper_readout(s);
  Vec64 sz(z_in.size());
  for (size_t j = 0; j < z_in.size(); ++j) sz[j] = sign64(z_in[j]);
  double n = static_cast<double>(c.n);
  double beta = c.eta / n * l1norm64(z_in);

  SingleLayerRun run;
  run.beta = beta;
  run.yhat = yhat;
  run.z_in = z_in;
  run.trajectory.rows.reserve(static_cast<size_t>(steps) + 1);

  double prev_gamma = 0.0, prev_alpha = 0.0;
  int prev_chi = 0;
  for (int t = 0; t <= steps; ++t) {
    Vec64 h = matvec64(w, z_in);
    double gamma = sqnorm64(h) / n;
    double alpha = dot64(h, ro.sv);
    int chi = static_cast<int>(sign64(dot64(ro.v, h) - yhat));
    double gb = std::numeric_limits<double>::quiet_NaN();
    if (with_baseline) gb = sqnorm64(matvec64(w, baseline_dir)) / n;

    if (t == 0) {
      run.gamma0 = gamma;
      run.gamma0_baseline = gb;
    } else {
      double dg_pred = beta * beta - 2.0 * beta * prev_chi * prev_alpha / n;
      run.max_gamma_identity_err =
          std::max(run.max_gamma_identity_err, std::fabs((gamma - prev_gamma) - dg_pred));
      run.max_alpha_identity_err =
          std::max(run.max_alpha_identity_err, std::fabs(alpha - (prev_alpha - beta * prev_chi * n)));
      run.sup_dev_recursion =
          std::max(run.sup_dev_recursion,
                   std::fabs(gamma - gamma_prediction(t, run.gamma0, beta, GammaForm::kRecursion)));
      run.sup_dev_statement =
          std::max(run.sup_dev_statement,
                   std::fabs(gamma - gamma_prediction(t, run.gamma0, beta, GammaForm::kStatement)));
      // Constancy is about the signs the updates consumed, so the final
      // row's chi (no step follows it) is recorded but not examined.
      if (t < steps && chi != run.trajectory.rows[0].chi) run.sign_constant = false;
      if (with_baseline) {
        run.baseline_drift = std::max(run.baseline_drift, std::fabs(gb - run.gamma0_baseline));
      }
    }

    run.trajectory.rows.push_back(
        {t, gamma, gb, gamma_prediction(t, run.gamma0, beta, GammaForm::kRecursion),
         gamma_prediction(t, run.gamma0, beta, GammaForm::kStatement), chi, alpha});

    if (t < steps) {
      apply_rank_one(w, c.eta / n * chi, ro.sv, sz);
    }
    prev_gamma = gamma;
    prev_alpha = alpha;
    prev_chi = chi;
  }
  run.gamma_growth = run.trajectory.rows.back().gamma - run.gamma0;
  run.r2_quadratic = quadratic_r2(run.trajectory.rows);
  return run;
}

namespace {

struct SinglePointSetup {
  TrainState state;
  Vec64 z_in;
  double yhat = 0.0;
};

SinglePointSetup single_point_setup(const LinearNetConfig& c) {
  SinglePointSetup sp;
  sp.state = init_network(c);
  Rng rx = Rng::stream(c.seed, "lab/x");
  Vec64 z = gaussian_vec64(rx, c.d, 1.0);
  for (int l = 0; l < c.train_layer; ++l) {
    z = matvec64(sp.state.weights[static_cast<size_t>(l)], z);
  }
  sp.z_in = std::move(z);
  Rng ry = Rng::stream(c.seed, "lab/yhat");
  double mag = ry.next_uniform(0.5, 1.5);
  sp.yhat = (ry.next_u64() & 1) ? -mag : mag;
  return sp;
}

}  // namespace

SingleLayerRun run_theorem1(const LinearNetConfig& c) {
  SinglePointSetup sp = single_point_setup(c);
  double norm = std::sqrt(sqnorm64(sp.z_in));
  if (norm == 0.0) throw std::runtime_error("run_theorem1: z_in collapsed to zero");
  Rng rb = Rng::stream(c.seed, "lab/baseline");
  Vec64 dir = gaussian_vec64(rb, static_cast<int64_t>(sp.z_in.size()), 1.0);
  double dn = std::sqrt(sqnorm64(dir));
  for (auto& x : dir) x *= norm / dn;
  return run_single_layer(sp.state, sp.z_in, sp.yhat, dir, c.steps);
}

SingleLayerRun run_theorem1(const LinearNetConfig& c, const Vec64& baseline_dir) {
  SinglePointSetup sp = single_point_setup(c);
  return run_single_layer(sp.state, sp.z_in, sp.yhat, baseline_dir, c.steps);
}

SignWindow estimate_sign_window(const LinearNetConfig& c, int n_trials, int max_steps) {
  validate(c);
  if (n_trials < 1) throw std::invalid_argument("estimate_sign_window: no trials");
  int cap = max_steps > 0 ? max_steps : static_cast<int>(std::ceil(10.0 / c.eta));

  SignWindow win;
  win.flip_steps.reserve(static_cast<size_t>(n_trials));
  for (int trial = 0; trial < n_trials; ++trial) {
    LinearNetConfig ct = c;
    ct.seed = Rng::stream(c.seed, "lab/window", trial).next_u64();
    SinglePointSetup sp = single_point_setup(ct);
    Readout ro = upper_readout(sp.state);
    double beta_v = c.eta / static_cast<double>(c.n) * l1norm64(sp.z_in) * l1norm64(ro.v);
    double u = dot64(ro.v, matvec64(sp.state.weights[static_cast<size_t>(c.train_layer)], sp.z_in));
    double chi0 = sign64(u - sp.yhat);
    int flip = cap;
    for (int t = 1; t <= cap; ++t) {
      u -= beta_v * chi0;  // sign held: we only look for the first departure
      if (sign64(u - sp.yhat) != chi0) {
        flip = t;
        break;
      }
    }
    win.flip_steps.push_back(flip);
  }
  std::vector<int> sorted = win.flip_steps;
  std::sort(sorted.begin(), sorted.end());
  win.window = sorted[static_cast<size_t>(0.05 * n_trials)];
  win.lambda_hat = win.window * c.eta;
  return win;
}

double run_sign_constancy(const LinearNetConfig& c, int n_trials) {
  validate(c);
  if (n_trials < 1) throw std::invalid_argument("run_sign_constancy: no trials");
  int held = 0;
  for (int trial = 0; trial < n_trials; ++trial) {
    LinearNetConfig ct = c;
    ct.seed = Rng::stream(c.seed, "lab/trial", trial).next_u64();
    SinglePointSetup sp = single_point_setup(ct);
    SingleLayerRun run = run_single_layer(sp.state, sp.z_in, sp.yhat, Vec64{}, c.steps);
    if (run.sign_constant) ++held;
  }
  return static_cast<double>(held) / static_cast<double>(n_trials);
}

void adam_step(Mat64& w, const Mat64& grad, Mat64& m, Mat64& v, int64_t t, const AdamParams& p) {
  if (grad.rows != w.rows || grad.cols != w.cols || m.rows != w.rows || m.cols != w.cols ||
      v.rows != w.rows || v.cols != w.cols) {
    throw std::invalid_argument("adam_step: moment or gradient shape mismatch");
  }
  if (t < 1) throw std::invalid_argument("adam_step: step index starts at 1");
  double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(t));
  double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(t));
  for (size_t i = 0; i < w.data.size(); ++i) {
    double g = grad.data[i];
    m.data[i] = p.beta1 * m.data[i] + (1.0 - p.beta1) * g;
    v.data[i] = p.beta2 * v.data[i] + (1.0 - p.beta2) * g * g;
    double mh = m.data[i] / c1;
    double vh = v.data[i] / c2;
    w.data[i] -= p.lr * mh / (std::sqrt(vh) + p.eps);
  }
}

Vec64 batch_feature_update_probe(const std::vector<Vec64>& batch_z, const Vec64& residuals,
                                 const Vec64& v, const Vec64& probe, double eta) {
  if (batch_z.empty()) throw std::invalid_argument("batch_feature_update_probe: empty batch");
  if (residuals.size() != batch_z.size()) {
    throw std::invalid_argument("batch_feature_update_probe: " + std::to_string(residuals.size()) +
                                " residuals for " + std::to_string(batch_z.size()) + " inputs");
  }
  size_t dim = batch_z[0].size();
  for (const auto& z : batch_z) {
    if (z.size() != dim) throw std::invalid_argument("batch_feature_update_probe: ragged batch");
  }
  if (probe.size() != dim) {
    throw std::invalid_argument("batch_feature_update_probe: probe size " +
                                std::to_string(probe.size()) + " vs batch dim " +
                                std::to_string(dim));
  }
  Vec64 summed(dim, 0.0);
  for (size_t b = 0; b < batch_z.size(); ++b) {
    for (size_t j = 0; j < dim; ++j) summed[j] += residuals[b] * batch_z[b][j];
  }
  double overlap = 0.0;
  for (size_t j = 0; j < dim; ++j) overlap += sign64(summed[j]) * probe[j];
  double n = static_cast<double>(v.size());
  Vec64 delta(v.size());
  for (size_t i = 0; i < v.size(); ++i) delta[i] = -(eta / n) * sign64(v[i]) * overlap;
  return delta;
}

namespace {

// c[i][j] = sum_k a[i][k] b[j][k], i.e. A B^T with both operands row-major.
Mat64 matmul_nt(const Mat64& a, const Mat64& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dims differ");
  Mat64 c(a.rows, b.rows);
  for (int64_t i = 0; i < a.rows; ++i) {
    const double* ra = a.data.data() + i * a.cols;
    double* rc = c.data.data() + i * c.cols;
    for (int64_t j = 0; j < b.rows; ++j) {
      const double* rb = b.data.data() + j * b.cols;
      double acc = 0.0;
      for (int64_t k = 0; k < a.cols; ++k) acc += ra[k] * rb[k];
      rc[j] = acc;
    }
  }
  return c;
}

double mean_row_sqnorm(const Mat64& m, int64_t limit_rows) {
  double acc = 0.0;
  for (int64_t i = 0; i < limit_rows; ++i) {
    const double* row = m.data.data() + i * m.cols;
    for (int64_t j = 0; j < m.cols; ++j) acc += row[j] * row[j];
  }
  return acc / static_cast<double>(limit_rows);
}

}  // namespace

Fig3Result run_fig3(const Fig3Config& c) {
  if (c.n < 1 || c.d < 1 || c.n_data < 1) throw std::invalid_argument("run_fig3: bad dims");
  if (c.steps < 1) throw std::invalid_argument("run_fig3: need at least one step");
  if (c.probes < 1 || c.probes > c.n_data) {
    throw std::invalid_argument("run_fig3: probes outside [1, n_data]");
  }
  if (c.baseline_dirs < 1) throw std::invalid_argument("run_fig3: need baseline directions");
  if (c.noise_var < 0.0) throw std::invalid_argument("run_fig3: negative noise variance");

  int64_t n = c.n, d = c.d, N = c.n_data, P = c.probes;

  Rng rw = Rng::stream(c.seed, "fig3/omega");
  double wscale = c.omega == OmegaScale::kInvSqrtD ? 1.0 / std::sqrt(static_cast<double>(d))
                                                   : 1.0 / static_cast<double>(d);
  Vec64 omega = gaussian_vec64(rw, d, wscale);

  Rng rx = Rng::stream(c.seed, "fig3/X");
  Mat64 X(N, d);
  for (auto& x : X.data) x = rx.next_gaussian();
  Rng re = Rng::stream(c.seed, "fig3/noise");
  double noise_std = std::sqrt(c.noise_var);
  Vec64 y(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) {
    const double* row = X.data.data() + i * d;
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) acc += row[j] * omega[static_cast<size_t>(j)];
    y[static_cast<size_t>(i)] = acc + re.next_gaussian() * noise_std;
  }

  LinearNetConfig net;
  net.d = c.d;
  net.n = c.n;
  net.depth = 2;
  net.train_layer = 1;
  net.eta = 1.0;  // unused: all layers train via Adam here
  net.steps = 0;
  net.seed = c.seed;
  TrainState state = init_network(net);
  Mat64& W0 = state.weights[0];
  Mat64& W1 = state.weights[1];
  Mat64& W2 = state.weights[2];

  // Baseline directions, frozen now and norm-matched to each layer's mean
  // initial input norm over the probe set.
  Mat64 h0 = matmul_nt(X, W0);  // N x n
  Mat64 h1 = matmul_nt(h0, W1);
  double targets[3] = {std::sqrt(mean_row_sqnorm(X, P)), std::sqrt(mean_row_sqnorm(h0, P)),
                       std::sqrt(mean_row_sqnorm(h1, P))};
  std::array<std::vector<Vec64>, 3> base_dirs;
  for (int l = 0; l < 3; ++l) {
    Rng rb = Rng::stream(c.seed, "fig3/baseline", l);
    int64_t dim = l == 0 ? d : n;
    for (int k = 0; k < c.baseline_dirs; ++k) {
      Vec64 g = gaussian_vec64(rb, dim, 1.0);
      double gn = std::sqrt(sqnorm64(g));
      for (auto& x : g) x *= targets[l] / gn;
      base_dirs[static_cast<size_t>(l)].push_back(std::move(g));
    }
  }

  Fig3Result out;
  for (auto& g : out.gamma) g.reserve(static_cast<size_t>(c.steps) + 1);
  for (auto& g : out.gamma_baseline) g.reserve(static_cast<size_t>(c.steps) + 1);
  out.loss.reserve(static_cast<size_t>(c.steps) + 1);

  std::array<Mat64, 3> moments_m = {Mat64(n, d), Mat64(n, n), Mat64(1, n)};
  std::array<Mat64, 3> moments_v = {Mat64(n, d), Mat64(n, n), Mat64(1, n)};

  for (int t = 0; t <= c.steps; ++t) {
    h0 = matmul_nt(X, W0);
    h1 = matmul_nt(h0, W1);
    Vec64 f(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) {
      const double* row = h1.data.data() + i * n;
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) acc += row[j] * W2.data[static_cast<size_t>(j)];
      f[static_cast<size_t>(i)] = acc;
    }
    Vec64 r(static_cast<size_t>(N));
    double loss = 0.0;
    for (int64_t i = 0; i < N; ++i) {
      r[static_cast<size_t>(i)] = f[static_cast<size_t>(i)] - y[static_cast<size_t>(i)];
      loss += r[static_cast<size_t>(i)] * r[static_cast<size_t>(i)];
    }
    out.loss.push_back(0.5 * loss / static_cast<double>(N));

    out.gamma[0].push_back(mean_row_sqnorm(h0, P) / static_cast<double>(n));
    out.gamma[1].push_back(mean_row_sqnorm(h1, P) / static_cast<double>(n));
    double fsq = 0.0;
    for (int64_t i = 0; i < P; ++i) fsq += f[static_cast<size_t>(i)] * f[static_cast<size_t>(i)];
    out.gamma[2].push_back(fsq / static_cast<double>(P) / static_cast<double>(n));
    const Mat64* layer_w[3] = {&W0, &W1, &W2};
    for (int l = 0; l < 3; ++l) {
      double acc = 0.0;
      for (const auto& dir : base_dirs[static_cast<size_t>(l)]) {
        acc += sqnorm64(matvec64(*layer_w[l], dir));
      }
      out.gamma_baseline[static_cast<size_t>(l)].push_back(
          acc / static_cast<double>(c.baseline_dirs) / static_cast<double>(n));
    }
    if (t == c.steps) break;

    // The 1-wide head makes every gradient rank one:
    //   dW2 = q2^T, dW1 = w2 q1^T, dW0 = (w2 W1) q0^T
    // with q's the residual-weighted input means.
    double invN = 1.0 / static_cast<double>(N);
    Mat64 dW2(1, n), dW1(n, n), dW0(n, d);
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t i = 0; i < N; ++i) acc += r[static_cast<size_t>(i)] * h1.at(i, j);
      dW2.data[static_cast<size_t>(j)] = acc * invN;
    }
    Vec64 q1(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t i = 0; i < N; ++i) acc += r[static_cast<size_t>(i)] * h0.at(i, j);
      q1[static_cast<size_t>(j)] = acc * invN;
    }
    Vec64 q0(static_cast<size_t>(d));
    for (int64_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int64_t i = 0; i < N; ++i) acc += r[static_cast<size_t>(i)] * X.at(i, j);
      q0[static_cast<size_t>(j)] = acc * invN;
    }
    Vec64 w2w1 = vecmat64(Vec64(W2.data), W1);
    for (int64_t a = 0; a < n; ++a) {
      double w2a = W2.data[static_cast<size_t>(a)];
      for (int64_t b = 0; b < n; ++b) dW1.at(a, b) = w2a * q1[static_cast<size_t>(b)];
      double pa = w2w1[static_cast<size_t>(a)];
      for (int64_t b = 0; b < d; ++b) dW0.at(a, b) = pa * q0[static_cast<size_t>(b)];
    }

    adam_step(W0, dW0, moments_m[0], moments_v[0], t + 1, c.adam);
    adam_step(W1, dW1, moments_m[1], moments_v[1], t + 1, c.adam);
    adam_step(W2, dW2, moments_m[2], moments_v[2], t + 1, c.adam);
  }
  return out;
}

}  // namespace plop::lab
