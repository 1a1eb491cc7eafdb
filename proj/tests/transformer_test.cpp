#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "plop/nfn.hpp"
#include "plop/placement.hpp"
#include "plop/transformer.hpp"

using namespace plop;
using namespace plop::toy;

namespace {

TransformerConfig tiny_config() {
  TransformerConfig c;
  c.vocab = 8;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_mlp = 32;
  c.n_layers = 1;
  c.max_seq = 8;
  c.seed = 13;
  return c;
}

TransformerConfig small_config() {
  TransformerConfig c;
  c.vocab = 16;
  c.d_model = 32;
  c.n_heads = 4;
  c.d_mlp = 64;
  c.n_layers = 2;
  c.max_seq = 24;
  c.seed = 77;
  return c;
}

}  // namespace

TEST_CASE("config validation rejects broken shapes") {
  TransformerConfig c = tiny_config();
  CHECK_NOTHROW(validate(c));
  c.d_model = 30;
  c.n_heads = 4;  // 30 does not split into 4 heads
  CHECK_THROWS(validate(c));
  c = tiny_config();
  c.vocab = 0;
  CHECK_THROWS(validate(c));
  c = tiny_config();
  c.max_seq = 0;
  CHECK_THROWS(validate(c));
}

TEST_CASE("init is deterministic and exposes seven modules per layer") {
  TransformerConfig c = small_config();
  Transformer a = init_transformer(c);
  Transformer b = init_transformer(c);
  CHECK(a.embedding.data == b.embedding.data);
  CHECK(a.layers[1].w_down.data == b.layers[1].w_down.data);

  auto mods = list_modules(a);
  REQUIRE(mods.size() == 14);
  CHECK(mods[0].name == "layers.0.attn.q_proj");
  CHECK(mods[6].name == "layers.0.mlp.down_proj");
  CHECK(mods[7].name == "layers.1.attn.q_proj");
  CHECK(mods[0].weight->rows == c.d_model);
  CHECK(mods[0].weight->cols == c.d_model);
  CHECK(mods[4].name == "layers.0.mlp.gate_proj");
  CHECK(mods[4].weight->rows == c.d_mlp);
  CHECK(mods[6].weight->rows == c.d_model);
  CHECK(mods[6].weight->cols == c.d_mlp);
  // every listed module resolves to a type and a layer
  for (const auto& m : mods) {
    CHECK(resolve_module_type(m.name).has_value());
    CHECK(layer_from_name(m.name).has_value());
  }
}

TEST_CASE("widen and narrow round trip the exact f32 image") {
  Transformer m = init_transformer(tiny_config());
  Transformer back = narrow(widen(m));
  CHECK(back.embedding.data == m.embedding.data);
  CHECK(back.positions.data == m.positions.data);
  for (size_t l = 0; l < m.layers.size(); ++l) {
    CHECK(back.layers[l].wq.data == m.layers[l].wq.data);
    CHECK(back.layers[l].w_gate.data == m.layers[l].w_gate.data);
  }
}

TEST_CASE("loss rejects bad batches with the row index") {
  TransformerF64 m = widen(init_transformer(tiny_config()));
  CHECK_THROWS(loss(m, {}));
  CHECK_THROWS(loss(m, {{3}}));                    // too short to predict anything
  CHECK_THROWS(loss(m, {{1, 2, 3, 4, 5, 6, 7, 0, 1}}));  // longer than max_seq
  CHECK_THROWS_WITH_AS(loss(m, {{1, 2}, {1, 99}}), doctest::Contains("1"),
                       std::invalid_argument);
  CHECK_THROWS(loss(m, {{-1, 2}}));
  CHECK(std::isfinite(loss(m, {{1, 2, 3}})));
}

TEST_CASE("logits respect the causal mask bit for bit") {
  TransformerF64 m = widen(init_transformer(small_config()));
  std::vector<int> a = {1, 2, 3, 4, 5, 6, 7};
  std::vector<int> b = a;
  b[4] = 11;  // only position 4 changes
  lab::Mat64 la = sequence_logits(m, a);
  lab::Mat64 lb = sequence_logits(m, b);
  REQUIRE(la.rows == 7);
  REQUIRE(la.cols == 16);
  for (int t = 0; t < 4; ++t) {
    for (int v = 0; v < 16; ++v) {
      CHECK(la.at(t, v) == lb.at(t, v));
    }
  }
  bool differs = false;
  for (int t = 4; t < 7 && !differs; ++t) {
    for (int v = 0; v < 16; ++v) {
      if (la.at(t, v) != lb.at(t, v)) {
        differs = true;
        break;
      }
    }
  }
  CHECK(differs);
}

TEST_CASE("analytic gradients match central differences") {
  TransformerConfig c = tiny_config();
  TransformerF64 m = widen(init_transformer(c));
  std::vector<std::vector<int>> batch = {{1, 2, 3, 4, 5}, {6, 7, 0, 1, 2}};
  TransformerF64 grads = widen(init_transformer(c));
  double base = loss_and_gradients(m, batch, grads);
  CHECK(std::isfinite(base));

  struct Probe {
    double* w;
    double g;
  };
  std::vector<Probe> probes;
  probes.push_back({&m.embedding.data[5], grads.embedding.data[5]});
  probes.push_back({&m.positions.data[9], grads.positions.data[9]});
  probes.push_back({&m.layers[0].wq.data[3], grads.layers[0].wq.data[3]});
  probes.push_back({&m.layers[0].wv.data[40], grads.layers[0].wv.data[40]});
  probes.push_back({&m.layers[0].wo.data[17], grads.layers[0].wo.data[17]});
  probes.push_back({&m.layers[0].w_gate.data[100], grads.layers[0].w_gate.data[100]});
  probes.push_back({&m.layers[0].w_up.data[200], grads.layers[0].w_up.data[200]});
  probes.push_back({&m.layers[0].w_down.data[311], grads.layers[0].w_down.data[311]});

  const double h = 1e-5;
  for (const auto& p : probes) {
    double keep = *p.w;
    *p.w = keep + h;
    double up = loss(m, batch);
    *p.w = keep - h;
    double dn = loss(m, batch);
    *p.w = keep;
    double fd = (up - dn) / (2 * h);
    double scale = std::max({1.0, std::fabs(fd), std::fabs(p.g)});
    CHECK(std::fabs(fd - p.g) / scale < 1e-4);
  }
}

TEST_CASE("captures agree with the wiring of the block") {
  TransformerConfig c = small_config();
  Transformer m = init_transformer(c);
  auto data = sample_batch(Task::kArithmetic, 3, 12, 5, 0);
  auto caps = capture_inputs(m, data);
  auto mods = list_modules(m);
  REQUIRE(caps.size() == mods.size());
  const size_t samples = 3 * 12;
  for (size_t i = 0; i < caps.size(); ++i) {
    CHECK(caps[i].module_name == mods[i].name);
    CHECK(caps[i].inputs.size() == samples);
    // each captured input must feed the module's weight
    CHECK(caps[i].inputs[0].size() == mods[i].weight->cols);
  }
  // q, k and v read the same normed stream
  for (size_t layer = 0; layer < 2; ++layer) {
    size_t base = layer * 7;
    for (size_t s = 0; s < samples; ++s) {
      CHECK(caps[base].inputs[s].data == caps[base + 1].inputs[s].data);
      CHECK(caps[base].inputs[s].data == caps[base + 2].inputs[s].data);
    }
  }
  // o_proj sees something else
  CHECK(caps[0].inputs[0].data != caps[3].inputs[0].data);
}

TEST_CASE("a fresh network scores flat, near one") {
  TransformerConfig c;
  c.vocab = 16;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_mlp = 128;
  c.n_layers = 2;
  c.max_seq = 32;
  c.seed = 909;
  Transformer m = init_transformer(c);
  auto data = sample_batch(Task::kArithmetic, 8, 24, 11, 0);
  auto caps = capture_inputs(m, data);
  auto mods = list_modules(m);
  std::vector<const Matrix*> ws;
  std::vector<const ActivationBatch*> bs;
  for (size_t i = 0; i < mods.size(); ++i) {
    ws.push_back(mods[i].weight);
    bs.push_back(&caps[i]);
  }
  NfnOptions opts;
  auto scores = score_modules(ws, bs, opts, 33, 2);
  float lo = std::numeric_limits<float>::max(), hi = 0.0f;
  for (const auto& s : scores) {
    lo = std::min(lo, s.score);
    hi = std::max(hi, s.score);
  }
  CHECK(lo > 0.5f);
  CHECK(hi < 2.0f);
  TypeScoreTable table = aggregate_by_type(scores);
  double tlo = 1e9, thi = 0.0;
  for (const auto& r : table.rows) {
    tlo = std::min(tlo, r.mean);
    thi = std::max(thi, r.mean);
  }
  CHECK(thi / tlo < 2.0);  // nothing separates before training
}

TEST_CASE("an identity q_proj scores exactly one") {
  TransformerConfig c = small_config();
  Transformer m = init_transformer(c);
  Matrix& wq = m.layers[0].wq;
  for (auto& x : wq.data) x = 0.0f;
  for (int64_t i = 0; i < wq.rows; ++i) wq.at(i, i) = 1.0f;
  auto data = sample_batch(Task::kArithmetic, 4, 12, 3, 0);
  auto caps = capture_inputs(m, data);
  NfnOptions opts;
  NFNScore s = nfn_dataset(wq, caps[0], opts, 99);
  CHECK(s.score == doctest::Approx(1.0f).epsilon(1e-4));
}

TEST_CASE("arithmetic rows are well formed clauses, cut to length") {
  auto rows = sample_batch(Task::kArithmetic, 6, 16, 21, 4);
  REQUIRE(rows.size() == 6);
  for (const auto& row : rows) {
    REQUIRE(row.size() == 16);
    for (size_t t = 0; t < row.size(); ++t) {
      int tok = row[t];
      switch (t % 6) {
        case 1: CHECK(tok == kTokPlus); break;
        case 3: CHECK(tok == kTokEquals); break;
        case 5: CHECK(tok == kTokSemicolon); break;
        default:
          CHECK(tok >= 0);
          CHECK(tok <= 9);
      }
    }
    // the sum actually holds inside each complete clause
    for (size_t base = 0; base + 4 < row.size(); base += 6) {
      CHECK(row[base + 4] == (row[base] + row[base + 2]) % 10);
    }
  }
  // determinism in (seed, step), variation across steps
  CHECK(sample_batch(Task::kArithmetic, 6, 16, 21, 4) == rows);
  CHECK(sample_batch(Task::kArithmetic, 6, 16, 21, 5) != rows);
  CHECK_THROWS(sample_batch(Task::kArithmetic, 0, 16, 21, 0));
  CHECK_THROWS(sample_batch(Task::kArithmetic, 6, 0, 21, 0));
}

TEST_CASE("the shuffled task permutes the same tokens") {
  auto arith = sample_batch(Task::kArithmetic, 1, 18, 33, 2);
  auto shuf = sample_batch(Task::kShuffled, 1, 18, 33, 2);
  // the first rows draw identical clauses before the shuffle reorders one
  std::vector<int> a = arith[0], b = shuf[0];
  CHECK(a != b);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("training reduces the loss and zero steps change nothing") {
  TransformerConfig c = small_config();
  Transformer m = init_transformer(c);
  Transformer untouched = init_transformer(c);
  auto none = train_adam(m, Task::kArithmetic, 0, 4, 12, lab::AdamParams{}, 7);
  CHECK(none.empty());
  CHECK(m.embedding.data == untouched.embedding.data);
  CHECK(m.layers[1].wo.data == untouched.layers[1].wo.data);

  auto losses = train_adam(m, Task::kArithmetic, 100, 4, 12, lab::AdamParams{}, 7);
  REQUIRE(losses.size() == 100);
  CHECK(losses.back() < 0.8 * losses.front());
  CHECK(m.embedding.data != untouched.embedding.data);
}

TEST_CASE("training refuses to continue through a divergence") {
  TransformerConfig c = small_config();  // vocab must cover the task tokens
  Transformer m = init_transformer(c);
  m.layers[0].wq.at(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(train_adam(m, Task::kArithmetic, 3, 2, 6, lab::AdamParams{}, 1),
                       doctest::Contains("diverged"), std::runtime_error);
}
