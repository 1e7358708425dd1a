#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fit/data.hpp"
#include "fit/layers.hpp"
#include "fit/meta_query.hpp"
#include "fit/scorers.hpp"
#include "fit/towers.hpp"

namespace fit {

enum class Pooling { din, average_pool };

Pooling interaction_from_string(const std::string& s);
std::string to_string(Pooling i);

struct ModelConfig {
  bool use_mqm = true;
  Pooling interaction = Pooling::din;
  Scorer scorer = Scorer::lss;
  int n_users = 0;
  int n_items = 0;
  int n_cats = 0;
  int embed_dim = 16;                         // d
  int n_meta = 64;                            // meta matrix rows
  int heads_u = 2;
  int heads_v = 2;
  int head_dim = 64;                          // p
  std::vector<int> tower_widths = {300, 300, 128};
  int lss_dim = 16;                           // scorer internal width
  std::vector<int> din_hidden = {64, 16};
  std::uint64_t seed = 1;

  int attr_width() const { return 2 * embed_dim; }  // item id + category id
  void validate() const;  // throws on inconsistent ablation flags / sizes
};

/// A single user's context for serving, ids already shifted (+1; 0 = pad).
struct UserContext {
  int user_id = 0;
  std::vector<int> seq_items, seq_cats;
};

/// The complete model: embedding tables, meta query module, DIN interaction,
/// the two towers, and the configured output scorer. Ablations are driven
/// entirely by the config (no separate classes).
class FitModel {
 public:
  explicit FitModel(const ModelConfig& config);

  struct ForwardOut {
    Tensor logits;  // [B]
    Tensor k;       // [B x N] candidate weights (defined only with MQM)
    Tensor q_star;  // [N x D]
    Tensor q_soft;  // [B x D]
  };

  /// Training/eval graph over one batch. `training` selects batch-norm mode;
  /// pass a tape to record gradients.
  ForwardOut forward(const Batch& batch, float tau, bool training, Tape* tape);

  /// Same graph but with the soft query replaced by the exact hard query
  /// row Q*[s] per example (inference semantics). Eval mode, no tape.
  ForwardOut forward_hard(const Batch& batch, float tau_for_selection);

  /// Item-side offline pass: representations stored for serving plus the
  /// per-item hard-query index at the temperature floor. `items`/`cats` are
  /// shifted ids. z rows are the head projections, or h_v when the scorer
  /// is dot (which consumes h directly).
  struct ItemReps {
    Tensor z;            // [n x store_heads()*store_dim()]
    std::vector<int> s;  // query indices (all 0 without MQM)
  };
  ItemReps item_reps(const std::vector<int>& items, const std::vector<int>& cats);

  /// One user, all N hard queries at once: returns Z with row n holding the
  /// user representation computed against query Q*[n]. Without MQM there is
  /// a single query-free row. Eval mode, batched.
  Tensor user_inference_stack(const UserContext& user);

  /// Scores one (user representation row, item record) pair with the
  /// configured scorer. zu/zv are rows of user_inference_stack / the store.
  float score_pair(const std::vector<float>& zu, const std::vector<float>& zv);

  std::map<std::string, Tensor> params() const;
  std::map<std::string, Tensor> buffers() const;

  /// Head layout of the stored/served representations.
  int store_heads() const;
  int store_dim() const;
  int user_rep_width() const { return store_heads_u() * store_dim(); }
  int store_heads_u() const;

  const ModelConfig& config() const { return config_; }

  EmbeddingTable user_emb, item_emb, cat_emb;
  MetaQuery mqm;
  DinAttention din;
  Tower user_tower, item_tower;
  LssParams lss;
  FlattenFcParams ffc;

 private:
  Tensor score(const Tower::Out& u, const Tower::Out& v, Tape* tape);
  ForwardOut forward_impl(const Batch& batch, float tau, bool training, bool hard,
                          Tape* tape);
  ModelConfig config_;
};

}  // namespace fit
