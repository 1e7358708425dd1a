#include "fit/model.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace fit {

Pooling interaction_from_string(const std::string& s) {
  if (s == "din") return Pooling::din;
  if (s == "average_pool") return Pooling::average_pool;
  throw std::runtime_error("unknown interaction '" + s + "' (want din|average_pool)");
}

std::string to_string(Pooling i) {
  return i == Pooling::din ? "din" : "average_pool";
}

void ModelConfig::validate() const {
  if (n_users <= 0 || n_items <= 0 || n_cats <= 0)
    throw std::runtime_error("model config: vocabulary sizes must be positive");
  if (embed_dim <= 0 || tower_widths.empty())
    throw std::runtime_error("model config: embed_dim/tower_widths");
  if (!use_mqm && interaction == Pooling::din)
    throw std::runtime_error(
        "model config: interaction=din requires use_mqm=true (the attention "
        "query is the soft query)");
  if (use_mqm && n_meta <= 0) throw std::runtime_error("model config: n_meta must be > 0");
  if (scorer != Scorer::dot && (heads_u <= 0 || heads_v <= 0 || head_dim <= 0))
    throw std::runtime_error("model config: head sizes must be positive");
}

FitModel::FitModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng root(config.seed);
  Rng r_emb = root.fork(1);
  Rng r_mqm = root.fork(2);
  Rng r_towers = root.fork(3);
  Rng r_din = root.fork(4);
  Rng r_scorer = root.fork(5);

  const int d = config.embed_dim;
  const int D = config.attr_width();
  user_emb = EmbeddingTable(config.n_users, d, "emb.user", r_emb);
  item_emb = EmbeddingTable(config.n_items, d, "emb.item", r_emb);
  cat_emb = EmbeddingTable(config.n_cats, d, "emb.cat", r_emb);

  if (config.use_mqm) mqm = MetaQuery(config.n_meta, D, r_mqm);
  if (config.interaction == Pooling::din)
    din = DinAttention(D, config.din_hidden, "din", r_din);

  const int user_in = d + D + (config.use_mqm ? D : 0);
  const bool project = config.scorer != Scorer::dot;
  user_tower = Tower(user_in, config.tower_widths, project ? config.heads_u : 0,
                     config.head_dim, "tower.user", r_towers);
  item_tower = Tower(D, config.tower_widths, project ? config.heads_v : 0, config.head_dim,
                     "tower.item", r_towers);

  if (config.scorer == Scorer::lss)
    lss = make_lss_params(config.heads_u, config.heads_v, config.lss_dim, "lss", r_scorer,
                          nullptr);
  if (config.scorer == Scorer::flatten_fc)
    ffc = make_flatten_fc_params(config.heads_u, config.heads_v, config.lss_dim, "ffc",
                                 r_scorer, nullptr);
}

int FitModel::store_heads() const {
  return config_.scorer == Scorer::dot ? 1 : config_.heads_v;
}

int FitModel::store_heads_u() const {
  return config_.scorer == Scorer::dot ? 1 : config_.heads_u;
}

int FitModel::store_dim() const {
  return config_.scorer == Scorer::dot ? config_.tower_widths.back() : config_.head_dim;
}

Tensor FitModel::score(const Tower::Out& u, const Tower::Out& v, Tape* tape) {
  switch (config_.scorer) {
    case Scorer::dot:
      return dot_score(u.h, v.h, tape);
    case Scorer::summax: {
      Tensor sim = similarity_matrix(u.z, v.z, config_.heads_u, config_.heads_v,
                                     config_.head_dim, tape);
      return summax_score(sim, config_.heads_u, config_.heads_v, tape);
    }
    case Scorer::lss: {
      Tensor sim = similarity_matrix(u.z, v.z, config_.heads_u, config_.heads_v,
                                     config_.head_dim, tape);
      return lss_score(sim, lss, config_.heads_u, config_.heads_v, tape);
    }
    case Scorer::flatten_fc: {
      Tensor sim = similarity_matrix(u.z, v.z, config_.heads_u, config_.heads_v,
                                     config_.head_dim, tape);
      return flatten_fc_score(sim, ffc, config_.heads_u, config_.heads_v, tape);
    }
  }
  throw std::runtime_error("model: unknown scorer");
}

FitModel::ForwardOut FitModel::forward_impl(const Batch& batch, float tau, bool training,
                                            bool hard, Tape* tape) {
  const int B = batch.size;
  const int K = batch.seq_len;
  ForwardOut out;

  Tensor cand_e = concat_cols(
      {item_emb.lookup(batch.cand_items, tape), cat_emb.lookup(batch.cand_cats, tape)},
      tape);

  Tensor query;
  if (config_.use_mqm) {
    out.q_star = mqm.self_attention(tape);
    out.k = mqm.candidate_weights(cand_e, tau, tape);
    if (hard) {
      // Exact hard-query rows; a pure gather, eval only.
      const std::vector<int> s = MetaQuery::query_indices(out.k);
      Tensor q = Tensor::zeros({B, config_.attr_width()});
      for (int i = 0; i < B; ++i)
        std::memcpy(q.data() + static_cast<std::size_t>(i) * config_.attr_width(),
                    out.q_star.data() +
                        static_cast<std::size_t>(s[static_cast<std::size_t>(i)]) *
                            config_.attr_width(),
                    sizeof(float) * static_cast<std::size_t>(config_.attr_width()));
      query = q;
    } else {
      query = MetaQuery::soft_query(out.k, out.q_star, tape);
    }
    out.q_soft = query;
  }

  Tensor seq_e = concat_cols(
      {item_emb.lookup(batch.seq_items, tape), cat_emb.lookup(batch.seq_cats, tape)}, tape);

  Tensor pooled = config_.interaction == Pooling::din
                      ? din.pool(seq_e, query, batch.mask, B, K, training, tape)
                      : masked_average(seq_e, batch.mask, B, K, tape);

  std::vector<Tensor> parts = {user_emb.lookup(batch.user_ids, tape), pooled};
  if (config_.use_mqm) parts.push_back(query);
  Tensor user_in = assemble_user_input(parts, tape);

  Tower::Out u = user_tower.forward(user_in, training, tape);
  Tower::Out v = item_tower.forward(cand_e, training, tape);
  out.logits = score(u, v, tape);
  return out;
}

FitModel::ForwardOut FitModel::forward(const Batch& batch, float tau, bool training,
                                       Tape* tape) {
  return forward_impl(batch, tau, training, /*hard=*/false, tape);
}

FitModel::ForwardOut FitModel::forward_hard(const Batch& batch, float tau_for_selection) {
  return forward_impl(batch, tau_for_selection, /*training=*/false, /*hard=*/true, nullptr);
}

FitModel::ItemReps FitModel::item_reps(const std::vector<int>& items,
                                       const std::vector<int>& cats) {
  if (items.size() != cats.size() || items.empty())
    throw std::runtime_error("item_reps: items/cats size mismatch");
  ItemReps out;
  Tensor e = concat_cols({item_emb.lookup(items, nullptr), cat_emb.lookup(cats, nullptr)},
                         nullptr);
  Tower::Out v = item_tower.forward(e, /*training=*/false, nullptr);
  out.z = config_.scorer == Scorer::dot ? v.h : v.z;
  if (config_.use_mqm) {
    Tensor k = mqm.candidate_weights(e, TemperatureSchedule{}.floor, nullptr);
    out.s = MetaQuery::query_indices(k);
  } else {
    out.s.assign(items.size(), 0);
  }
  return out;
}

Tensor FitModel::user_inference_stack(const UserContext& user) {
  const int N = config_.use_mqm ? config_.n_meta : 1;
  const int K = std::max<int>(1, static_cast<int>(user.seq_items.size()));

  Tensor q_star;
  if (config_.use_mqm) q_star = mqm.self_attention(nullptr);

  // Replicate the user context once per query row.
  std::vector<int> user_ids(static_cast<std::size_t>(N), user.user_id);
  std::vector<int> seq_items(static_cast<std::size_t>(N) * K, 0);
  std::vector<int> seq_cats(static_cast<std::size_t>(N) * K, 0);
  Tensor mask = Tensor::zeros({N * K});
  for (int n = 0; n < N; ++n)
    for (std::size_t k = 0; k < user.seq_items.size(); ++k) {
      const std::size_t r = static_cast<std::size_t>(n) * K + k;
      seq_items[r] = user.seq_items[k];
      seq_cats[r] = user.seq_cats[k];
      mask.data()[r] = 1.0f;
    }

  Tensor seq_e = concat_cols(
      {item_emb.lookup(seq_items, nullptr), cat_emb.lookup(seq_cats, nullptr)}, nullptr);

  Tensor query;
  if (config_.use_mqm) query = q_star;  // row n = Q*[n]

  Tensor pooled = config_.interaction == Pooling::din
                      ? din.pool(seq_e, query, mask, N, K, /*training=*/false, nullptr)
                      : masked_average(seq_e, mask, N, K, nullptr);

  std::vector<Tensor> parts = {user_emb.lookup(user_ids, nullptr), pooled};
  if (config_.use_mqm) parts.push_back(query);
  Tensor user_in = assemble_user_input(parts, nullptr);

  Tower::Out u = user_tower.forward(user_in, /*training=*/false, nullptr);
  return config_.scorer == Scorer::dot ? u.h : u.z;
}

float FitModel::score_pair(const std::vector<float>& zu, const std::vector<float>& zv) {
  const int hu = store_heads_u();
  const int hv = store_heads();
  const int p = store_dim();
  if (static_cast<int>(zu.size()) != hu * p || static_cast<int>(zv.size()) != hv * p)
    throw std::runtime_error("score_pair: representation width mismatch");
  Tensor tu = Tensor::from_values({1, hu * p}, zu);
  Tensor tv = Tensor::from_values({1, hv * p}, zv);
  switch (config_.scorer) {
    case Scorer::dot:
      return dot_score(tu, tv, nullptr).item();
    case Scorer::summax:
      return summax_score(similarity_matrix(tu, tv, hu, hv, p, nullptr), hu, hv, nullptr)
          .item();
    case Scorer::lss:
      return lss_score(similarity_matrix(tu, tv, hu, hv, p, nullptr), lss, hu, hv, nullptr)
          .item();
    case Scorer::flatten_fc:
      return flatten_fc_score(similarity_matrix(tu, tv, hu, hv, p, nullptr), ffc, hu, hv,
                              nullptr)
          .item();
  }
  throw std::runtime_error("score_pair: unknown scorer");
}

std::map<std::string, Tensor> FitModel::params() const {
  std::map<std::string, Tensor> out;
  user_emb.register_params(out);
  item_emb.register_params(out);
  cat_emb.register_params(out);
  if (config_.use_mqm) mqm.register_params(out);
  if (config_.interaction == Pooling::din) din.register_params(out);
  user_tower.register_params(out);
  item_tower.register_params(out);
  if (config_.scorer == Scorer::lss) {
    out["lss.W1"] = lss.W1;
    out["lss.b1"] = lss.b1;
    out["lss.W2"] = lss.W2;
    out["lss.b2"] = lss.b2;
    out["lss.w"] = lss.w;
  }
  if (config_.scorer == Scorer::flatten_fc) {
    out["ffc.W3"] = ffc.W3;
    out["ffc.b3"] = ffc.b3;
    out["ffc.w"] = ffc.w;
  }
  return out;
}

std::map<std::string, Tensor> FitModel::buffers() const {
  std::map<std::string, Tensor> out;
  if (config_.interaction == Pooling::din) din.register_buffers(out);
  user_tower.register_buffers(out);
  item_tower.register_buffers(out);
  return out;
}

}  // namespace fit
