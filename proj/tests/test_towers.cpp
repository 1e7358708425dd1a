#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "fit/model.hpp"
#include "fit/towers.hpp"

using namespace fit;

namespace {

void fill_values(Tensor& t, float lo, float hi, unsigned salt) {
  Rng rng(9000 + salt);
  fill_uniform(t, rng, lo, hi);
}

void zero_all(Tensor& t) { std::fill(t.values().begin(), t.values().end(), 0.0f); }

}  // namespace

// ---------------------------------------------------------------------------
// DIN-style attention pooling
// ---------------------------------------------------------------------------

TEST_CASE("din pool: weight net frozen at 1 reduces to a plain masked sum") {
  Rng rng(1);
  DinAttention din(4, {3, 2}, "din", rng);
  for (DenseLayer& l : din.net) {
    zero_all(l.weight);
    zero_all(l.bias);
  }
  din.net.back().bias.values()[0] = 1.0f;  // constant unit weight

  const int B = 2, K = 3;
  Tensor seq = Tensor::zeros({B * K, 4});
  fill_values(seq, -1.0f, 1.0f, 0);
  Tensor mask = Tensor::from_values({B * K}, {1, 1, 0, 1, 0, 0});
  Tensor pooled = din.pool(seq, Tensor::zeros({B, 4}), mask, B, K, false, nullptr);

  for (int b = 0; b < B; ++b)
    for (int j = 0; j < 4; ++j) {
      double want = 0;
      for (int k = 0; k < K; ++k)
        if (mask.at(b * K + k) > 0) want += seq.at(b * K + k, j);
      CHECK(pooled.at(b, j) == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("din pool: one valid position gives a(e,q) * e") {
  Rng rng(2);
  DinAttention din(3, {4}, "din", rng);
  const int B = 2, K = 1;
  Tensor seq = Tensor::zeros({B * K, 3});
  Tensor query = Tensor::zeros({B, 3});
  fill_values(seq, -1.0f, 1.0f, 1);
  fill_values(query, -1.0f, 1.0f, 2);
  Tensor mask = Tensor::from_values({B * K}, {1, 1});

  Tensor w = din.weights(seq, query, mask, B, K, false, nullptr);
  Tensor pooled = din.pool(seq, query, mask, B, K, false, nullptr);
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < 3; ++j)
      CHECK(pooled.at(b, j) == doctest::Approx(w.at(b, 0) * seq.at(b, j)).epsilon(1e-6));
}

TEST_CASE("din pool matches the per-position scalar recomputation") {
  Rng rng(3);
  DinAttention din(5, {6, 3}, "din", rng);
  const int B = 3, K = 4;
  Tensor seq = Tensor::zeros({B * K, 5});
  Tensor query = Tensor::zeros({B, 5});
  fill_values(seq, -1.0f, 1.0f, 3);
  fill_values(query, -1.0f, 1.0f, 4);
  Tensor mask = Tensor::from_values({B * K}, {1, 1, 1, 0,
                                              1, 0, 0, 0,
                                              1, 1, 1, 1});

  Tensor w = din.weights(seq, query, mask, B, K, false, nullptr);
  Tensor pooled = din.pool(seq, query, mask, B, K, false, nullptr);
  REQUIRE(w.shape() == std::vector<int>{B * K, 1});
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < 5; ++j) {
      double want = 0;
      for (int k = 0; k < K; ++k) {
        const int r = b * K + k;
        if (mask.at(r) > 0) want += static_cast<double>(w.at(r, 0)) * seq.at(r, j);
      }
      CHECK(pooled.at(b, j) == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("din pool ignores the contents of masked positions entirely") {
  // Training mode is the demanding case: the dice batch statistics must also
  // exclude masked rows, or garbage in a padding slot would leak into every
  // position's activation.
  Rng rng(4);
  DinAttention din(3, {4, 2}, "din", rng);
  const int B = 2, K = 3;
  Tensor query = Tensor::zeros({B, 3});
  fill_values(query, -1.0f, 1.0f, 5);
  Tensor mask = Tensor::from_values({B * K}, {1, 1, 0, 1, 0, 0});

  Tensor seq_a = Tensor::zeros({B * K, 3});
  fill_values(seq_a, -1.0f, 1.0f, 6);
  Tensor seq_b = Tensor::zeros({B * K, 3});
  seq_b.values() = seq_a.values();
  for (int k = 0; k < B * K; ++k)
    if (mask.at(k) == 0.0f)
      for (int j = 0; j < 3; ++j) seq_b.values()[static_cast<std::size_t>(k * 3 + j)] = 77.0f;

  // Fresh buffers per run so train-mode running-stat updates cannot differ.
  Rng rng_a(4), rng_b(4);
  DinAttention din_a(3, {4, 2}, "din", rng_a), din_b(3, {4, 2}, "din", rng_b);
  Tensor pool_a = din_a.pool(seq_a, query, mask, B, K, true, nullptr);
  Tensor pool_b = din_b.pool(seq_b, query, mask, B, K, true, nullptr);
  CHECK(std::memcmp(pool_a.data(), pool_b.data(), sizeof(float) * B * 3) == 0);
}

TEST_CASE("masked positions receive zero gradient") {
  Rng rng(5);
  DinAttention din(3, {4}, "din", rng);
  const int B = 2, K = 3;
  Tensor seq = Tensor::zeros({B * K, 3}, /*requires_grad=*/true);
  fill_values(seq, -1.0f, 1.0f, 7);
  Tensor query = Tensor::zeros({B, 3});
  fill_values(query, -1.0f, 1.0f, 8);
  Tensor mask = Tensor::from_values({B * K}, {1, 0, 1, 1, 1, 0});

  Tape tape;
  Tensor pooled = din.pool(seq, query, mask, B, K, true, &tape);
  tape.backward(sum_all(pooled, &tape));

  const auto* g = seq.grad_if_allocated();
  REQUIRE(g != nullptr);
  for (int r = 0; r < B * K; ++r) {
    double row = 0;
    for (int j = 0; j < 3; ++j) row += std::abs((*g)[static_cast<std::size_t>(r * 3 + j)]);
    CAPTURE(r);
    if (mask.at(r) == 0.0f) CHECK(row == 0.0);
    else CHECK(row > 0.0);
  }
}

// ---------------------------------------------------------------------------
// Average pooling (the interaction used without the meta matrix)
// ---------------------------------------------------------------------------

TEST_CASE("masked_average: cancellation, identity, and loop oracle") {
  Tensor pair = Tensor::from_values({2, 2}, {1, -2, -1, 2});  // v and -v
  Tensor both = Tensor::from_values({2}, {1, 1});
  Tensor avg = masked_average(pair, both, 1, 2, nullptr);
  CHECK(avg.at(0, 0) == doctest::Approx(0.0));
  CHECK(avg.at(0, 1) == doctest::Approx(0.0));

  Tensor only_first = Tensor::from_values({2}, {1, 0});
  Tensor one = masked_average(pair, only_first, 1, 2, nullptr);
  CHECK(one.at(0, 0) == doctest::Approx(1.0));
  CHECK(one.at(0, 1) == doctest::Approx(-2.0));

  const int B = 3, K = 4, D = 5;
  Tensor seq = Tensor::zeros({B * K, D});
  fill_values(seq, -1.0f, 1.0f, 9);
  Tensor mask = Tensor::from_values({B * K}, {1, 1, 0, 0,
                                              0, 0, 0, 0,  // fully masked row
                                              1, 1, 1, 0});
  Tensor out = masked_average(seq, mask, B, K, nullptr);
  for (int b = 0; b < B; ++b) {
    double count = 0;
    for (int k = 0; k < K; ++k) count += mask.at(b * K + k);
    for (int j = 0; j < D; ++j) {
      double want = 0;
      for (int k = 0; k < K; ++k)
        if (mask.at(b * K + k) > 0) want += seq.at(b * K + k, j);
      want = count > 0 ? want / count : 0.0;
      CHECK(out.at(b, j) == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

// ---------------------------------------------------------------------------
// User input assembly
// ---------------------------------------------------------------------------

TEST_CASE("assemble_user_input: fixed order, fixed widths") {
  Tensor profile = Tensor::zeros({2, 16});
  Tensor pooled = Tensor::zeros({2, 32});
  Tensor query = Tensor::zeros({2, 32});
  fill_values(profile, 0.0f, 1.0f, 10);
  fill_values(pooled, 2.0f, 3.0f, 11);
  fill_values(query, 4.0f, 5.0f, 12);

  Tensor full = assemble_user_input({profile, pooled, query}, nullptr);
  REQUIRE(full.shape() == std::vector<int>{2, 80});
  CHECK(full.at(0, 0) == profile.at(0, 0));
  CHECK(full.at(0, 16) == pooled.at(0, 0));
  CHECK(full.at(1, 48) == query.at(1, 0));
  CHECK(full.at(1, 79) == query.at(1, 31));

  Tensor no_query = assemble_user_input({profile, pooled}, nullptr);
  REQUIRE(no_query.shape() == std::vector<int>{2, 48});

  // Concatenation is order-sensitive: swapping fields must change the result.
  Tensor swapped = assemble_user_input({pooled, profile, query}, nullptr);
  bool any_diff = false;
  for (int j = 0; j < 80 && !any_diff; ++j) any_diff = swapped.at(0, j) != full.at(0, j);
  CHECK(any_diff);
}

// ---------------------------------------------------------------------------
// Tower forward
// ---------------------------------------------------------------------------

TEST_CASE("tower: zero input with zeroed biases gives zero body and bias heads") {
  Rng rng(6);
  Tower tower(6, {5, 4}, 2, 3, "t", rng);
  for (DenseLayer& l : tower.stack) zero_all(l.bias);
  for (int i = 0; i < 6; ++i)
    tower.head_b.values()[static_cast<std::size_t>(i)] = 0.5f + static_cast<float>(i);

  Tensor x = Tensor::zeros({3, 6});
  Tower::Out out = tower.forward(x, true, nullptr);
  for (int b = 0; b < 3; ++b) {
    for (int j = 0; j < 4; ++j) {
      CHECK(out.h_top.at(b, j) == 0.0f);
      CHECK(out.h.at(b, j) == 0.0f);  // zero-norm rows stay zero
    }
    for (int j = 0; j < 6; ++j)
      CHECK(out.z.at(b, j) == doctest::Approx(tower.head_b.at(j)));
  }
}

TEST_CASE("tower: identity-padded single head reproduces the top layer") {
  Rng rng(7);
  Tensor x = Tensor::zeros({4, 5});
  fill_values(x, -1.0f, 1.0f, 13);

  // Truncating head: p=2 < top width 4.
  Tower narrow(5, {6, 4}, 1, 2, "t", rng);
  zero_all(narrow.head_w);
  zero_all(narrow.head_b);
  narrow.head_w.values()[0 * 4 + 0] = 1.0f;
  narrow.head_w.values()[1 * 4 + 1] = 1.0f;
  Tower::Out nout = narrow.forward(x, false, nullptr);
  for (int b = 0; b < 4; ++b)
    for (int j = 0; j < 2; ++j) CHECK(nout.z.at(b, j) == nout.h_top.at(b, j));

  // Padding head: p=6 > top width 4.
  Tower wide(5, {6, 4}, 1, 6, "t", rng);
  zero_all(wide.head_w);
  zero_all(wide.head_b);
  for (int j = 0; j < 4; ++j) wide.head_w.values()[static_cast<std::size_t>(j * 4 + j)] = 1.0f;
  Tower::Out wout = wide.forward(x, false, nullptr);
  for (int b = 0; b < 4; ++b) {
    for (int j = 0; j < 4; ++j) CHECK(wout.z.at(b, j) == wout.h_top.at(b, j));
    CHECK(wout.z.at(b, 4) == 0.0f);
    CHECK(wout.z.at(b, 5) == 0.0f);
  }
}

TEST_CASE("tower: heads match a per-head loop oracle") {
  Rng rng(8);
  const int heads = 3, p = 4, top = 5;
  Tower tower(7, {6, top}, heads, p, "t", rng);
  Tensor x = Tensor::zeros({3, 7});
  fill_values(x, -1.0f, 1.0f, 14);
  Tower::Out out = tower.forward(x, false, nullptr);
  REQUIRE(out.z.shape() == std::vector<int>{3, heads * p});
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < heads; ++i)
      for (int j = 0; j < p; ++j) {
        double acc = tower.head_b.at(i * p + j);
        for (int c = 0; c < top; ++c)
          acc += static_cast<double>(tower.head_w.at(i * p + j, c)) * out.h_top.at(b, c);
        CHECK(out.z.at(b, i * p + j) == doctest::Approx(acc).epsilon(1e-5));
      }
}

TEST_CASE("tower: normalized output has unit rows") {
  // A row whose top-layer units are all ReLU-dead is legitimately the zero
  // vector (the normalizer's zero guard); only non-degenerate rows must land
  // on the unit sphere.
  Rng rng(10);
  Tower tower(6, {8, 5}, 0, 0, "t", rng);
  int checked = 0;
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = Tensor::zeros({4, 6});
    fill_uniform(x, rng, -2.0f, 2.0f);
    Tower::Out out = tower.forward(x, trial % 2 == 0, nullptr);
    for (int b = 0; b < 4; ++b) {
      double top = 0, sq = 0;
      for (int j = 0; j < 5; ++j) {
        top += std::abs(out.h_top.at(b, j));
        sq += static_cast<double>(out.h.at(b, j)) * out.h.at(b, j);
      }
      if (top == 0.0) continue;
      CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-6);
      ++checked;
    }
  }
  CHECK(checked >= 15);
}

TEST_CASE("tower: eval-mode forward is batch equivariant, bitwise") {
  Rng rng(11);
  Tower tower(5, {7, 4}, 2, 3, "t", rng);
  const int B = 5;
  Tensor x = Tensor::zeros({B, 5});
  fill_values(x, -1.0f, 1.0f, 15);
  Tower::Out batch = tower.forward(x, false, nullptr);

  for (int b = 0; b < B; ++b) {
    Tensor row = Tensor::zeros({1, 5});
    for (int j = 0; j < 5; ++j) row.values()[static_cast<std::size_t>(j)] = x.at(b, j);
    Tower::Out solo = tower.forward(row, false, nullptr);
    for (int j = 0; j < 4; ++j) {
      CHECK(solo.h_top.at(0, j) == batch.h_top.at(b, j));
      CHECK(solo.h.at(0, j) == batch.h.at(b, j));
    }
    for (int j = 0; j < 6; ++j) CHECK(solo.z.at(0, j) == batch.z.at(b, j));
  }
}

// ---------------------------------------------------------------------------
// The batched all-queries user pass used at serving time
// ---------------------------------------------------------------------------

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_users = 5;
  c.n_items = 7;
  c.n_cats = 3;
  c.embed_dim = 4;
  c.n_meta = 3;
  c.heads_u = 2;
  c.heads_v = 2;
  c.head_dim = 3;
  c.tower_widths = {6, 5};
  c.lss_dim = 4;
  c.din_hidden = {4, 3};
  c.scorer = Scorer::summax;
  c.seed = 9;
  return c;
}

// The same user-side computation as the batched stack, but for one query row,
// built from the model's own submodules.
std::vector<float> single_query_forward(FitModel& m, const UserContext& user, int n) {
  const int K = std::max<int>(1, static_cast<int>(user.seq_items.size()));
  Tensor q_star = m.mqm.self_attention(nullptr);
  Tensor q_row = Tensor::zeros({1, m.config().attr_width()});
  for (int j = 0; j < m.config().attr_width(); ++j)
    q_row.values()[static_cast<std::size_t>(j)] = q_star.at(n, j);

  std::vector<int> items(static_cast<std::size_t>(K), 0), cats(static_cast<std::size_t>(K), 0);
  Tensor mask = Tensor::zeros({K});
  for (std::size_t k = 0; k < user.seq_items.size(); ++k) {
    items[k] = user.seq_items[k];
    cats[k] = user.seq_cats[k];
    mask.data()[k] = 1.0f;
  }
  Tensor seq_e = concat_cols(
      {m.item_emb.lookup(items, nullptr), m.cat_emb.lookup(cats, nullptr)}, nullptr);
  Tensor pooled = m.din.pool(seq_e, q_row, mask, 1, K, false, nullptr);
  Tensor user_in = assemble_user_input(
      {m.user_emb.lookup({user.user_id}, nullptr), pooled, q_row}, nullptr);
  Tower::Out u = m.user_tower.forward(user_in, false, nullptr);
  const Tensor& rep = m.config().scorer == Scorer::dot ? u.h : u.z;
  std::vector<float> out(static_cast<std::size_t>(rep.dim(1)));
  for (int j = 0; j < rep.dim(1); ++j) out[static_cast<std::size_t>(j)] = rep.at(0, j);
  return out;
}

}  // namespace

TEST_CASE("user_inference_stack: each row equals its own single-query forward") {
  FitModel m(tiny_config());
  UserContext user{2, {1, 3, 5}, {1, 2, 3}};
  Tensor Z = m.user_inference_stack(user);
  REQUIRE(Z.shape() == std::vector<int>{3, m.user_rep_width()});
  for (int n = 0; n < 3; ++n) {
    const std::vector<float> solo = single_query_forward(m, user, n);
    for (int j = 0; j < m.user_rep_width(); ++j) {
      CAPTURE(n);
      CAPTURE(j);
      CHECK(Z.at(n, j) == solo[static_cast<std::size_t>(j)]);  // bitwise
    }
  }
}

TEST_CASE("user_inference_stack: one meta row reduces to a single forward") {
  ModelConfig c = tiny_config();
  c.n_meta = 1;
  FitModel m(c);
  UserContext user{1, {2, 4}, {1, 2}};
  Tensor Z = m.user_inference_stack(user);
  REQUIRE(Z.shape() == std::vector<int>{1, m.user_rep_width()});
  const std::vector<float> solo = single_query_forward(m, user, 0);
  for (int j = 0; j < m.user_rep_width(); ++j)
    CHECK(Z.at(0, j) == solo[static_cast<std::size_t>(j)]);
}

TEST_CASE("user_inference_stack: empty history and query-free ablation") {
  FitModel m(tiny_config());
  UserContext fresh{3, {}, {}};
  Tensor Z = m.user_inference_stack(fresh);
  REQUIRE(Z.shape() == std::vector<int>{3, m.user_rep_width()});
  for (float v : Z.values()) CHECK(std::isfinite(v));

  ModelConfig plain = tiny_config();
  plain.use_mqm = false;
  plain.interaction = Pooling::average_pool;
  FitModel m2(plain);
  Tensor Z2 = m2.user_inference_stack(UserContext{1, {1, 2}, {1, 1}});
  REQUIRE(Z2.shape() == std::vector<int>{1, m2.user_rep_width()});
  for (float v : Z2.values()) CHECK(std::isfinite(v));
}
