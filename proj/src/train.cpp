#include "fit/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace fit {

namespace {

std::map<std::string, Tensor> merged_state(const FitModel& model) {
  std::map<std::string, Tensor> all = model.params();
  for (auto& [name, t] : model.buffers()) all.emplace(name, t);
  return all;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Per-example cosine(soft query, Q*[s]) for one already-run forward.
void collect_qs(const FitModel::ForwardOut& fwd, int batch, int d, std::vector<double>& out) {
  if (!fwd.k.defined()) return;
  const std::vector<int> s = MetaQuery::query_indices(fwd.k);
  for (int i = 0; i < batch; ++i) {
    std::vector<float> soft(fwd.q_soft.data() + static_cast<std::size_t>(i) * d,
                            fwd.q_soft.data() + static_cast<std::size_t>(i + 1) * d);
    std::vector<float> hard(
        fwd.q_star.data() + static_cast<std::size_t>(s[static_cast<std::size_t>(i)]) * d,
        fwd.q_star.data() +
            static_cast<std::size_t>(s[static_cast<std::size_t>(i)] + 1) * d);
    out.push_back(query_similarity(soft, hard));
  }
}

}  // namespace

std::map<std::string, Tensor> snapshot_state(const FitModel& model) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : merged_state(model))
    out.emplace(name, Tensor::from_values(t.shape(), t.values()));
  return out;
}

void restore_state(FitModel& model, const std::map<std::string, Tensor>& state) {
  auto dst = merged_state(model);
  if (state.size() != dst.size())
    throw std::runtime_error("restore_state: section count mismatch");
  for (auto& [name, t] : dst) {
    const auto it = state.find(name);
    if (it == state.end()) throw std::runtime_error("restore_state: missing " + name);
    if (it->second.shape() != t.shape())
      throw std::runtime_error("restore_state: shape mismatch in " + name);
    t.values() = it->second.values();
  }
}

EvalReport evaluate(FitModel& model, const std::vector<TrainingExample>& examples,
                    int batch_size, int max_seq_len, float tau) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<float> probs;
  std::vector<int> labels;
  for (const Batch& b : make_batches(examples, batch_size, max_seq_len, nullptr)) {
    FitModel::ForwardOut fwd = model.forward(b, tau, /*training=*/false, nullptr);
    Tensor p = sigmoid(fwd.logits, nullptr);
    for (int i = 0; i < b.size; ++i) {
      probs.push_back(p.data()[i]);
      labels.push_back(b.labels_int[static_cast<std::size_t>(i)]);
    }
  }
  EvalReport report;
  report.auc = auc(probs, labels);
  report.logloss = logloss(probs, labels);
  report.n_examples = static_cast<std::int64_t>(probs.size());
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

double median_query_similarity(FitModel& model, const std::vector<TrainingExample>& examples,
                               int batch_size, int max_seq_len, float tau,
                               std::size_t limit) {
  std::vector<TrainingExample> slice(
      examples.begin(),
      examples.begin() + static_cast<std::ptrdiff_t>(std::min(limit, examples.size())));
  std::vector<double> qs;
  for (const Batch& b : make_batches(slice, batch_size, max_seq_len, nullptr)) {
    FitModel::ForwardOut fwd = model.forward(b, tau, /*training=*/false, nullptr);
    collect_qs(fwd, b.size, model.config().attr_width(), qs);
  }
  return median(std::move(qs));
}

TrainResult train(FitModel& model, const Split& data, const TrainConfig& cfg,
                  std::ostream* log) {
  if (data.train.empty()) throw std::runtime_error("train: empty training split");
  TrainResult result;

  Adam adam(model.params(), AdamConfig{cfg.lr, 0.9f, 0.999f, 1e-8f});
  Rng shuffle_root(model.config().seed ^ 0x5bd1e995u);

  const long steps_per_epoch = static_cast<long>(
      (data.train.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
      static_cast<std::size_t>(cfg.batch_size));
  const TemperatureSchedule schedule{steps_per_epoch, cfg.tau_floor};

  long step = 0;
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = shuffle_root.fork(static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    long loss_n = 0;
    float tau = cfg.tau_floor;
    for (const Batch& batch :
         make_batches(data.train, cfg.batch_size, cfg.max_seq_len, &epoch_rng)) {
      tau = temperature(step, schedule);
      Tape tape;
      try {
        FitModel::ForwardOut fwd = model.forward(batch, tau, /*training=*/true, &tape);
        Tensor loss = bce_with_logits(fwd.logits, batch.labels, &tape);
        result.loss_curve.push_back(loss.item());
        loss_sum += loss.item();
        ++loss_n;
        adam.zero_grad();
        tape.backward(loss);
      } catch (const std::exception& e) {
        throw std::runtime_error("training diverged at step " + std::to_string(step) +
                                 ": " + e.what());
      }
      adam.step();
      ++step;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.step = step;
    stats.tau = tau;
    stats.train_loss = loss_n > 0 ? loss_sum / static_cast<double>(loss_n) : 0.0;
    if (!data.val.empty()) {
      const EvalReport val =
          evaluate(model, data.val, cfg.batch_size, cfg.max_seq_len, tau);
      stats.val_auc = val.auc;
      stats.val_logloss = val.logloss;
      if (model.config().use_mqm)
        stats.qs_median = median_query_similarity(
            model, data.val, cfg.batch_size, cfg.max_seq_len, tau,
            static_cast<std::size_t>(cfg.batch_size));
    }
    result.epochs.push_back(stats);
    if (log)
      (*log) << "epoch=" << epoch << " step=" << step << " tau=" << stats.tau
             << " loss=" << stats.train_loss << " val_auc=" << stats.val_auc
             << " val_logloss=" << stats.val_logloss << " qs=" << stats.qs_median
             << '\n';

    if (data.val.empty() || stats.val_auc > result.best_val_auc) {
      result.best_val_auc = stats.val_auc;
      result.best_epoch = epoch;
      result.best_state = snapshot_state(model);
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  if (result.best_state.empty()) result.best_state = snapshot_state(model);
  return result;
}

}  // namespace fit
