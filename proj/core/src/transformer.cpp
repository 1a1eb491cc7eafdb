#include "plop/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace plop::toy {

using lab::Mat64;

namespace {

constexpr double kRmsEps = 1e-6;

double rms_of(const double* x, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += x[i] * x[i];
  return std::sqrt(acc / n + kRmsEps);
}

void rmsnorm_rows(const Mat64& x, Mat64& y) {
  for (int64_t t = 0; t < x.rows; ++t) {
    const double* xr = x.data.data() + t * x.cols;
    double* yr = y.data.data() + t * y.cols;
    double r = rms_of(xr, static_cast<int>(x.cols));
    for (int64_t j = 0; j < x.cols; ++j) yr[j] = xr[j] / r;
  }
}

// dx += backward of y = x / rms(x) given dy, recomputing r from x.
void rmsnorm_backward_row(const double* x, const double* dy, double* dx, int n) {
  double r = rms_of(x, n);
  double dot = 0.0;
  for (int i = 0; i < n; ++i) dot += dy[i] * x[i];
  double scale = dot / (n * r * r * r);
  for (int i = 0; i < n; ++i) dx[i] += dy[i] / r - x[i] * scale;
}

// y[t] = W x[t] for every row of x.
Mat64 linear_rows(const Mat64& w, const Mat64& x) {
  Mat64 y(x.rows, w.rows);
  for (int64_t t = 0; t < x.rows; ++t) {
    const double* xr = x.data.data() + t * x.cols;
    double* yr = y.data.data() + t * y.cols;
    for (int64_t i = 0; i < w.rows; ++i) {
      const double* wr = w.data.data() + i * w.cols;
      double acc = 0.0;
      for (int64_t j = 0; j < w.cols; ++j) acc += wr[j] * xr[j];
      yr[i] = acc;
    }
  }
  return y;
}

// dW += dy[t] (x) x[t]; dx[t] = W^T dy[t]. Either output may be skipped.
void linear_backward_rows(const Mat64& w, const Mat64& x, const Mat64& dy, Mat64* dw, Mat64* dx) {
  for (int64_t t = 0; t < x.rows; ++t) {
    const double* xr = x.data.data() + t * x.cols;
    const double* dyr = dy.data.data() + t * dy.cols;
    if (dw) {
      for (int64_t i = 0; i < w.rows; ++i) {
        double* dwr = dw->data.data() + i * w.cols;
        double d = dyr[i];
        for (int64_t j = 0; j < w.cols; ++j) dwr[j] += d * xr[j];
      }
    }
    if (dx) {
      double* dxr = dx->data.data() + t * dx->cols;
      for (int64_t i = 0; i < w.rows; ++i) {
        const double* wr = w.data.data() + i * w.cols;
        double d = dyr[i];
        for (int64_t j = 0; j < w.cols; ++j) dxr[j] += d * wr[j];
      }
    }
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct SeqCache {
  std::vector<int> tokens;
  Mat64 h0;
  // per layer
  std::vector<Mat64> h_in, xn, q, k, v, ao, h_mid, mn, g, u, act;
  std::vector<std::vector<Mat64>> att;  // [layer][head], rows t, causal cols s <= t
  Mat64 h_out, fn;
};

void check_tokens(const TransformerConfig& c, const std::vector<int>& toks, size_t row,
                  int min_len) {
  if (static_cast<int>(toks.size()) < min_len) {
    throw std::invalid_argument("sequence " + std::to_string(row) + " holds " +
                                std::to_string(toks.size()) + " tokens, need at least " +
                                std::to_string(min_len));
  }
  if (static_cast<int>(toks.size()) > c.max_seq) {
    throw std::invalid_argument("sequence " + std::to_string(row) + " length " +
                                std::to_string(toks.size()) + " exceeds max_seq " +
                                std::to_string(c.max_seq));
  }
  for (int tok : toks) {
    if (tok < 0 || tok >= c.vocab) {
      throw std::invalid_argument("sequence " + std::to_string(row) + " has token " +
                                  std::to_string(tok) + " outside vocab " +
                                  std::to_string(c.vocab));
    }
  }
}

void forward_seq(const TransformerF64& m, const std::vector<int>& toks, SeqCache& c) {
  const auto& cfg = m.config;
  int T = static_cast<int>(toks.size());
  int d = cfg.d_model, H = cfg.n_heads, dh = d / H;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  c.tokens = toks;
  c.h0 = Mat64(T, d);
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < d; ++j) {
      c.h0.at(t, j) = m.embedding.at(toks[static_cast<size_t>(t)], j) + m.positions.at(t, j);
    }
  }

  c.h_in.assign(static_cast<size_t>(cfg.n_layers), Mat64());
  c.xn.assign(static_cast<size_t>(cfg.n_layers), Mat64());
  c.q.assign(static_cast<size_t>(cfg.n_layers), Mat64());
  c.k.assign(static_cast<size_t>(cfg.n_layers), Mat64());
  c.v.assign(static_cast<size_t>(cfg.n_layers), Mat64());
  c.ao.assign(static_cast<size_t>(cfg.n_layers), Mat64());
  c.h_mid.assign(static_cast<size_t>(cfg.n_layers), Mat64());
  c.mn.assign(static_cast<size_t>(cfg.n_layers), Mat64());
  c.g.assign(static_cast<size_t>(cfg.n_layers), Mat64());
  c.u.assign(static_cast<size_t>(cfg.n_layers), Mat64());
  c.act.assign(static_cast<size_t>(cfg.n_layers), Mat64());
  c.att.assign(static_cast<size_t>(cfg.n_layers), {});

  Mat64 h = c.h0;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lw = m.layers[static_cast<size_t>(l)];
    c.h_in[static_cast<size_t>(l)] = h;

    Mat64 xn(T, d);
    rmsnorm_rows(h, xn);
    c.xn[static_cast<size_t>(l)] = xn;
    Mat64 q = linear_rows(lw.wq, xn);
    Mat64 k = linear_rows(lw.wk, xn);
    Mat64 v = linear_rows(lw.wv, xn);

    Mat64 ao(T, d);
    auto& att_l = c.att[static_cast<size_t>(l)];
    att_l.assign(static_cast<size_t>(H), Mat64(T, T));
    for (int hd = 0; hd < H; ++hd) {
      Mat64& a = att_l[static_cast<size_t>(hd)];
      int off = hd * dh;
      for (int t = 0; t < T; ++t) {
        double mx = -1e300;
        for (int s = 0; s <= t; ++s) {
          double sc = 0.0;
          for (int i = 0; i < dh; ++i) sc += q.at(t, off + i) * k.at(s, off + i);
          sc *= inv_sqrt_dh;
          a.at(t, s) = sc;
          mx = std::max(mx, sc);
        }
        double z = 0.0;
        for (int s = 0; s <= t; ++s) {
          double e = std::exp(a.at(t, s) - mx);
          a.at(t, s) = e;
          z += e;
        }
        for (int s = 0; s <= t; ++s) a.at(t, s) /= z;
        for (int i = 0; i < dh; ++i) {
          double acc = 0.0;
          for (int s = 0; s <= t; ++s) acc += a.at(t, s) * v.at(s, off + i);
          ao.at(t, off + i) = acc;
        }
      }
    }
    c.q[static_cast<size_t>(l)] = std::move(q);
    c.k[static_cast<size_t>(l)] = std::move(k);
    c.v[static_cast<size_t>(l)] = std::move(v);
    c.ao[static_cast<size_t>(l)] = ao;

    Mat64 attn_out = linear_rows(lw.wo, ao);
    for (size_t i = 0; i < h.data.size(); ++i) h.data[i] += attn_out.data[i];
    c.h_mid[static_cast<size_t>(l)] = h;

    Mat64 mn(T, d);
    rmsnorm_rows(h, mn);
    c.mn[static_cast<size_t>(l)] = mn;
    Mat64 g = linear_rows(lw.w_gate, mn);
    Mat64 u = linear_rows(lw.w_up, mn);
    Mat64 act(T, cfg.d_mlp);
    for (size_t i = 0; i < act.data.size(); ++i) {
      double gv = g.data[i];
      act.data[i] = gv * sigmoid(gv) * u.data[i];
    }
    c.g[static_cast<size_t>(l)] = std::move(g);
    c.u[static_cast<size_t>(l)] = std::move(u);
    c.act[static_cast<size_t>(l)] = act;

    Mat64 mlp_out = linear_rows(lw.w_down, act);
    for (size_t i = 0; i < h.data.size(); ++i) h.data[i] += mlp_out.data[i];
  }
  c.h_out = h;
  c.fn = Mat64(T, d);
  rmsnorm_rows(h, c.fn);
}

// Cross entropy summed over predicted positions; dlogits = p - onehot stays
// unscaled here, the batch wrapper divides by the prediction count.
double seq_loss(const TransformerF64& m, const SeqCache& c, Mat64* dlogits) {
  int T = static_cast<int>(c.tokens.size());
  int V = m.config.vocab;
  double total = 0.0;
  if (dlogits) *dlogits = Mat64(T, V);
  std::vector<double> logits(static_cast<size_t>(V));
  for (int t = 0; t + 1 < T; ++t) {
    const double* fr = c.fn.data.data() + static_cast<int64_t>(t) * m.config.d_model;
    double mx = -1e300;
    for (int vtok = 0; vtok < V; ++vtok) {
      const double* er = m.embedding.data.data() + static_cast<int64_t>(vtok) * m.config.d_model;
      double acc = 0.0;
      for (int j = 0; j < m.config.d_model; ++j) acc += fr[j] * er[j];
      logits[static_cast<size_t>(vtok)] = acc;
      mx = std::max(mx, acc);
    }
    double z = 0.0;
    for (int vtok = 0; vtok < V; ++vtok) z += std::exp(logits[static_cast<size_t>(vtok)] - mx);
    double lse = mx + std::log(z);
    int target = c.tokens[static_cast<size_t>(t) + 1];
    total += lse - logits[static_cast<size_t>(target)];
    if (dlogits) {
      for (int vtok = 0; vtok < V; ++vtok) {
        double p = std::exp(logits[static_cast<size_t>(vtok)] - lse);
        dlogits->at(t, vtok) = p - (vtok == target ? 1.0 : 0.0);
      }
    }
  }
  return total;
}

void backward_seq(const TransformerF64& m, const SeqCache& c, const Mat64& dlogits,
                  TransformerF64& g) {
  const auto& cfg = m.config;
  int T = static_cast<int>(c.tokens.size());
  int d = cfg.d_model, H = cfg.n_heads, dh = d / H;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  // unembedding (tied): logits[t] = E fn[t]
  Mat64 dfn(T, d);
  for (int t = 0; t + 1 < T; ++t) {
    const double* dlr = dlogits.data.data() + static_cast<int64_t>(t) * cfg.vocab;
    const double* fr = c.fn.data.data() + static_cast<int64_t>(t) * d;
    double* dfr = dfn.data.data() + static_cast<int64_t>(t) * d;
    for (int vtok = 0; vtok < cfg.vocab; ++vtok) {
      double dl = dlr[vtok];
      if (dl == 0.0) continue;
      const double* er = m.embedding.data.data() + static_cast<int64_t>(vtok) * d;
      double* der = g.embedding.data.data() + static_cast<int64_t>(vtok) * d;
      for (int j = 0; j < d; ++j) {
        dfr[j] += dl * er[j];
        der[j] += dl * fr[j];
      }
    }
  }

  Mat64 dh_cur(T, d);
  for (int t = 0; t < T; ++t) {
    rmsnorm_backward_row(c.h_out.data.data() + static_cast<int64_t>(t) * d,
                         dfn.data.data() + static_cast<int64_t>(t) * d,
                         dh_cur.data.data() + static_cast<int64_t>(t) * d, d);
  }

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& lw = m.layers[static_cast<size_t>(l)];
    auto& lg = g.layers[static_cast<size_t>(l)];
    const Mat64& h_mid = c.h_mid[static_cast<size_t>(l)];
    const Mat64& mn = c.mn[static_cast<size_t>(l)];
    const Mat64& gx = c.g[static_cast<size_t>(l)];
    const Mat64& ux = c.u[static_cast<size_t>(l)];

    // mlp: h_out = h_mid + Wd (silu(g) * u)
    Mat64 dact(T, cfg.d_mlp);
    linear_backward_rows(lw.w_down, c.act[static_cast<size_t>(l)], dh_cur, &lg.w_down, &dact);
    Mat64 dg(T, cfg.d_mlp), du(T, cfg.d_mlp);
    for (size_t i = 0; i < dact.data.size(); ++i) {
      double gv = gx.data[i];
      double sg = sigmoid(gv);
      double silu = gv * sg;
      du.data[i] = dact.data[i] * silu;
      dg.data[i] = dact.data[i] * ux.data[i] * sg * (1.0 + gv * (1.0 - sg));
    }
    Mat64 dmn(T, d);
    linear_backward_rows(lw.w_up, mn, du, &lg.w_up, &dmn);
    linear_backward_rows(lw.w_gate, mn, dg, &lg.w_gate, &dmn);
    for (int t = 0; t < T; ++t) {
      rmsnorm_backward_row(h_mid.data.data() + static_cast<int64_t>(t) * d,
                           dmn.data.data() + static_cast<int64_t>(t) * d,
                           dh_cur.data.data() + static_cast<int64_t>(t) * d, d);
    }

    // attention: h_mid = h_in + Wo ao
    Mat64 dao(T, d);
    linear_backward_rows(lw.wo, c.ao[static_cast<size_t>(l)], dh_cur, &lg.wo, &dao);
    const Mat64& q = c.q[static_cast<size_t>(l)];
    const Mat64& k = c.k[static_cast<size_t>(l)];
    const Mat64& v = c.v[static_cast<size_t>(l)];
    Mat64 dq(T, d), dk(T, d), dv(T, d);
    for (int hd = 0; hd < H; ++hd) {
      const Mat64& a = c.att[static_cast<size_t>(l)][static_cast<size_t>(hd)];
      int off = hd * dh;
      for (int t = 0; t < T; ++t) {
        // da over the causal row, then the softmax jacobian
        double row_dot = 0.0;
        std::vector<double> da(static_cast<size_t>(t) + 1);
        for (int s = 0; s <= t; ++s) {
          double acc = 0.0;
          for (int i = 0; i < dh; ++i) acc += dao.at(t, off + i) * v.at(s, off + i);
          da[static_cast<size_t>(s)] = acc;
          row_dot += a.at(t, s) * acc;
        }
        for (int s = 0; s <= t; ++s) {
          double dscore = a.at(t, s) * (da[static_cast<size_t>(s)] - row_dot) * inv_sqrt_dh;
          for (int i = 0; i < dh; ++i) {
            dq.at(t, off + i) += dscore * k.at(s, off + i);
            dk.at(s, off + i) += dscore * q.at(t, off + i);
          }
        }
        for (int s = 0; s <= t; ++s) {
          double w = a.at(t, s);
          for (int i = 0; i < dh; ++i) dv.at(s, off + i) += w * dao.at(t, off + i);
        }
      }
    }
    const Mat64& xn = c.xn[static_cast<size_t>(l)];
    Mat64 dxn(T, d);
    linear_backward_rows(lw.wq, xn, dq, &lg.wq, &dxn);
    linear_backward_rows(lw.wk, xn, dk, &lg.wk, &dxn);
    linear_backward_rows(lw.wv, xn, dv, &lg.wv, &dxn);
    const Mat64& h_in = c.h_in[static_cast<size_t>(l)];
    for (int t = 0; t < T; ++t) {
      rmsnorm_backward_row(h_in.data.data() + static_cast<int64_t>(t) * d,
                           dxn.data.data() + static_cast<int64_t>(t) * d,
                           dh_cur.data.data() + static_cast<int64_t>(t) * d, d);
    }
  }

  for (int t = 0; t < T; ++t) {
    int tok = c.tokens[static_cast<size_t>(t)];
    for (int j = 0; j < d; ++j) {
      double dval = dh_cur.at(t, j);
      g.embedding.at(tok, j) += dval;
      g.positions.at(t, j) += dval;
    }
  }
}

TransformerF64 zeros_like(const TransformerF64& m) {
  TransformerF64 z;
  z.config = m.config;
  z.embedding = Mat64(m.embedding.rows, m.embedding.cols);
  z.positions = Mat64(m.positions.rows, m.positions.cols);
  for (const auto& l : m.layers) {
    TransformerF64::Layer zl;
    zl.wq = Mat64(l.wq.rows, l.wq.cols);
    zl.wk = Mat64(l.wk.rows, l.wk.cols);
    zl.wv = Mat64(l.wv.rows, l.wv.cols);
    zl.wo = Mat64(l.wo.rows, l.wo.cols);
    zl.w_gate = Mat64(l.w_gate.rows, l.w_gate.cols);
    zl.w_up = Mat64(l.w_up.rows, l.w_up.cols);
    zl.w_down = Mat64(l.w_down.rows, l.w_down.cols);
    z.layers.push_back(std::move(zl));
  }
  return z;
}

std::vector<Mat64*> weight_fields(TransformerF64& m) {
  std::vector<Mat64*> out = {&m.embedding, &m.positions};
  for (auto& l : m.layers) {
    out.insert(out.end(), {&l.wq, &l.wk, &l.wv, &l.wo, &l.w_gate, &l.w_up, &l.w_down});
  }
  return out;
}

int64_t prediction_count(const std::vector<std::vector<int>>& batch) {
  int64_t n = 0;
  for (const auto& row : batch) n += static_cast<int64_t>(row.size()) - 1;
  return n;
}

}  // namespace

void validate(const TransformerConfig& c) {
  if (c.vocab < 2 || c.d_model < 1 || c.n_heads < 1 || c.d_mlp < 1 || c.n_layers < 1 ||
      c.max_seq < 1) {
    throw std::invalid_argument("TransformerConfig: every dimension must be positive");
  }
  if (c.d_model % c.n_heads != 0) {
    throw std::invalid_argument("TransformerConfig: d_model " + std::to_string(c.d_model) +
                                " not divisible by " + std::to_string(c.n_heads) + " heads");
  }
}

Transformer init_transformer(const TransformerConfig& c) {
  validate(c);
  Transformer m;
  m.config = c;
  Rng re = Rng::stream(c.seed, "toy/embedding");
  m.embedding = gaussian_matrix(re, c.vocab, c.d_model, 0.1);
  Rng rp = Rng::stream(c.seed, "toy/positions");
  m.positions = gaussian_matrix(rp, c.max_seq, c.d_model, 0.1);
  double attn_scale = 1.0 / std::sqrt(static_cast<double>(c.d_model));
  double down_scale = 1.0 / std::sqrt(static_cast<double>(c.d_mlp));
  for (int l = 0; l < c.n_layers; ++l) {
    auto draw = [&](const char* suffix, int64_t rows, int64_t cols, double scale) {
      Rng r = Rng::stream(c.seed, "toy/layers." + std::to_string(l) + "." + suffix);
      return gaussian_matrix(r, rows, cols, scale);
    };
    LayerWeights lw;
    lw.wq = draw("attn.q_proj", c.d_model, c.d_model, attn_scale);
    lw.wk = draw("attn.k_proj", c.d_model, c.d_model, attn_scale);
    lw.wv = draw("attn.v_proj", c.d_model, c.d_model, attn_scale);
    lw.wo = draw("attn.o_proj", c.d_model, c.d_model, attn_scale);
    lw.w_gate = draw("mlp.gate_proj", c.d_mlp, c.d_model, attn_scale);
    lw.w_up = draw("mlp.up_proj", c.d_mlp, c.d_model, attn_scale);
    lw.w_down = draw("mlp.down_proj", c.d_model, c.d_mlp, down_scale);
    m.layers.push_back(std::move(lw));
  }
  return m;
}

std::vector<ModuleRef> list_modules(const Transformer& m) {
  std::vector<ModuleRef> out;
  for (size_t l = 0; l < m.layers.size(); ++l) {
    std::string base = "layers." + std::to_string(l) + ".";
    const auto& lw = m.layers[l];
    out.push_back({base + "attn.q_proj", &lw.wq});
    out.push_back({base + "attn.k_proj", &lw.wk});
    out.push_back({base + "attn.v_proj", &lw.wv});
    out.push_back({base + "attn.o_proj", &lw.wo});
    out.push_back({base + "mlp.gate_proj", &lw.w_gate});
    out.push_back({base + "mlp.up_proj", &lw.w_up});
    out.push_back({base + "mlp.down_proj", &lw.w_down});
  }
  return out;
}

namespace {

Mat64 widen_matrix(const Matrix& m) {
  Mat64 out(m.rows, m.cols);
  for (size_t i = 0; i < m.data.size(); ++i) out.data[i] = static_cast<double>(m.data[i]);
  return out;
}

Matrix narrow_matrix(const Mat64& m) {
  Matrix out(m.rows, m.cols);
  for (size_t i = 0; i < m.data.size(); ++i) out.data[i] = static_cast<float>(m.data[i]);
  return out;
}

}  // namespace

TransformerF64 widen(const Transformer& m) {
  TransformerF64 out;
  out.config = m.config;
  out.embedding = widen_matrix(m.embedding);
  out.positions = widen_matrix(m.positions);
  for (const auto& l : m.layers) {
    out.layers.push_back({widen_matrix(l.wq), widen_matrix(l.wk), widen_matrix(l.wv),
                          widen_matrix(l.wo), widen_matrix(l.w_gate), widen_matrix(l.w_up),
                          widen_matrix(l.w_down)});
  }
  return out;
}

Transformer narrow(const TransformerF64& m) {
  Transformer out;
  out.config = m.config;
  out.embedding = narrow_matrix(m.embedding);
  out.positions = narrow_matrix(m.positions);
  for (const auto& l : m.layers) {
    out.layers.push_back({narrow_matrix(l.wq), narrow_matrix(l.wk), narrow_matrix(l.wv),
                          narrow_matrix(l.wo), narrow_matrix(l.w_gate), narrow_matrix(l.w_up),
                          narrow_matrix(l.w_down)});
  }
  return out;
}

double loss(const TransformerF64& m, const std::vector<std::vector<int>>& batch) {
  validate(m.config);
  if (batch.empty()) throw std::invalid_argument("loss: empty batch");
  double total = 0.0;
  SeqCache cache;
  for (size_t b = 0; b < batch.size(); ++b) {
    check_tokens(m.config, batch[b], b, 2);
    forward_seq(m, batch[b], cache);
    total += seq_loss(m, cache, nullptr);
  }
  return total / static_cast<double>(prediction_count(batch));
}

lab::Mat64 sequence_logits(const TransformerF64& m, const std::vector<int>& tokens) {
  validate(m.config);
  check_tokens(m.config, tokens, 0, 1);
  SeqCache cache;
  forward_seq(m, tokens, cache);
  int T = static_cast<int>(tokens.size());
  int V = m.config.vocab;
  lab::Mat64 logits(T, V);
  for (int t = 0; t < T; ++t) {
    const double* fr = cache.fn.data.data() + static_cast<int64_t>(t) * m.config.d_model;
    for (int vtok = 0; vtok < V; ++vtok) {
      const double* er = m.embedding.data.data() + static_cast<int64_t>(vtok) * m.config.d_model;
      double acc = 0.0;
      for (int j = 0; j < m.config.d_model; ++j) acc += fr[j] * er[j];
      logits.at(t, vtok) = acc;
    }
  }
  return logits;
}

double loss_and_gradients(const TransformerF64& m, const std::vector<std::vector<int>>& batch,
                          TransformerF64& grads) {
  validate(m.config);
  if (batch.empty()) throw std::invalid_argument("loss_and_gradients: empty batch");
  grads = zeros_like(m);
  double total = 0.0;
  SeqCache cache;
  for (size_t b = 0; b < batch.size(); ++b) {
    check_tokens(m.config, batch[b], b, 2);
    forward_seq(m, batch[b], cache);
    Mat64 dlogits;
    total += seq_loss(m, cache, &dlogits);
    backward_seq(m, cache, dlogits, grads);
  }
  double inv = 1.0 / static_cast<double>(prediction_count(batch));
  for (Mat64* w : weight_fields(grads)) {
    for (auto& x : w->data) x *= inv;
  }
  return total * inv;
}

std::vector<ActivationBatch> capture_inputs(const Transformer& m,
                                            const std::vector<std::vector<int>>& batch) {
  validate(m.config);
  if (batch.empty()) throw std::invalid_argument("capture_inputs: empty batch");
  TransformerF64 wide = widen(m);
  std::vector<ModuleRef> mods = list_modules(m);
  std::vector<ActivationBatch> out(mods.size());
  for (size_t i = 0; i < mods.size(); ++i) out[i].module_name = mods[i].name;

  SeqCache cache;
  for (size_t b = 0; b < batch.size(); ++b) {
    check_tokens(m.config, batch[b], b, 1);
    forward_seq(wide, batch[b], cache);
    int T = static_cast<int>(batch[b].size());
    for (int l = 0; l < m.config.n_layers; ++l) {
      const Mat64* sources[7] = {
          &cache.xn[static_cast<size_t>(l)], &cache.xn[static_cast<size_t>(l)],
          &cache.xn[static_cast<size_t>(l)], &cache.ao[static_cast<size_t>(l)],
          &cache.mn[static_cast<size_t>(l)], &cache.mn[static_cast<size_t>(l)],
          &cache.act[static_cast<size_t>(l)]};
      for (int mslot = 0; mslot < 7; ++mslot) {
        const Mat64& src = *sources[mslot];
        auto& dst = out[static_cast<size_t>(l * 7 + mslot)];
        for (int t = 0; t < T; ++t) {
          Vector z(src.cols);
          for (int64_t j = 0; j < src.cols; ++j) {
            z[j] = static_cast<float>(src.at(t, j));
          }
          dst.inputs.push_back(std::move(z));
        }
      }
    }
  }
  return out;
}

std::vector<std::vector<int>> sample_batch(Task task, int batch, int seq, uint64_t seed,
                                           int64_t step) {
  if (batch < 1) throw std::invalid_argument("sample_batch: batch must be positive");
  if (seq < 1) throw std::invalid_argument("sample_batch: seq must be positive");
  Rng rng = Rng::stream(seed, "toy/batch", step);
  auto digit = [&rng] { return static_cast<int>(rng.next_double() * 10.0); };
  std::vector<std::vector<int>> rows;
  rows.reserve(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    std::vector<int> row;
    row.reserve(static_cast<size_t>(seq) + 5);
    while (static_cast<int>(row.size()) < seq) {
      int a = digit(), c = digit();
      row.insert(row.end(), {a, kTokPlus, c, kTokEquals, (a + c) % 10, kTokSemicolon});
    }
    row.resize(static_cast<size_t>(seq));  // the tail clause is cut to fit
    if (task == Task::kShuffled) {
      for (int i = seq - 1; i > 0; --i) {
        int j = static_cast<int>(rng.next_double() * (i + 1));
        std::swap(row[static_cast<size_t>(i)], row[static_cast<size_t>(j)]);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<double> train_adam(Transformer& m, Task task, int steps, int batch, int seq,
                               const lab::AdamParams& adam, uint64_t data_seed) {
  validate(m.config);
  if (steps < 0) throw std::invalid_argument("train_adam: negative step count");
  TransformerF64 w = widen(m);
  TransformerF64 grads = zeros_like(w);
  TransformerF64 m1 = zeros_like(w), m2 = zeros_like(w);
  std::vector<double> losses;
  losses.reserve(static_cast<size_t>(steps));
  for (int step = 0; step < steps; ++step) {
    auto data = sample_batch(task, batch, seq, data_seed, step);
    double step_loss = loss_and_gradients(w, data, grads);
    if (!std::isfinite(step_loss)) {
      throw std::runtime_error("train_adam: loss diverged at step " + std::to_string(step));
    }
    losses.push_back(step_loss);
    auto wf = weight_fields(w), gf = weight_fields(grads);
    auto m1f = weight_fields(m1), m2f = weight_fields(m2);
    for (size_t i = 0; i < wf.size(); ++i) {
      lab::adam_step(*wf[i], *gf[i], *m1f[i], *m2f[i], step + 1, adam);
    }
  }
  m = narrow(w);
  return losses;
}

}  // namespace plop::toy
