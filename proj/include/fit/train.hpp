#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "fit/data.hpp"
#include "fit/metrics.hpp"
#include "fit/model.hpp"
#include "fit/optim.hpp"

namespace fit {

struct TrainConfig {
  ModelConfig model;
  float lr = 0.001f;
  int batch_size = 2048;
  int epochs = 3;
  int max_seq_len = 50;
  int early_stop_patience = 2;  // consecutive non-improving validations
  float tau_floor = 0.001f;
  bool deterministic = true;
};

struct EpochStats {
  int epoch = 0;
  long step = 0;       // global step count at epoch end
  float tau = 0.0f;
  double train_loss = 0.0;  // mean over the epoch's steps
  double val_auc = 0.0;
  double val_logloss = 0.0;
  double qs_median = 0.0;   // soft-vs-hard query cosine, first val batch
};

struct TrainResult {
  std::map<std::string, Tensor> best_state;  // params + buffers, deep copies
  std::vector<EpochStats> epochs;
  std::vector<float> loss_curve;  // one entry per optimizer step
  double best_val_auc = 0.0;
  int best_epoch = -1;
};

/// Trains in place. The soft query is used throughout; the temperature
/// anneals linearly over the first epoch (threshold = steps per epoch) and
/// then sits at the floor. The best-validation-AUC parameter snapshot is
/// returned; the model itself is left at its final state. Non-finite loss
/// aborts with a diagnostic. Bitwise deterministic for a fixed config.
TrainResult train(FitModel& model, const Split& data, const TrainConfig& cfg,
                  std::ostream* log = nullptr);

/// Eval-mode scoring of a full example list; probabilities = sigmoid(logits).
EvalReport evaluate(FitModel& model, const std::vector<TrainingExample>& examples,
                    int batch_size, int max_seq_len, float tau);

/// Restores a snapshot produced by train() into the model.
void restore_state(FitModel& model, const std::map<std::string, Tensor>& state);

/// Full parameter+buffer snapshot of the model (deep copies).
std::map<std::string, Tensor> snapshot_state(const FitModel& model);

/// Median cosine between each example's soft query and its hard query row,
/// computed at the given temperature over up to `limit` examples.
double median_query_similarity(FitModel& model, const std::vector<TrainingExample>& examples,
                               int batch_size, int max_seq_len, float tau,
                               std::size_t limit = 1000);

}  // namespace fit
