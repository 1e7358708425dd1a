#include "fit/serving.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace fit {

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

void precompute_store(FitModel& model, const std::vector<int>& item_cat,
                      const std::string& out_path) {
  const int n_items = static_cast<int>(item_cat.size());
  if (n_items == 0) throw std::runtime_error("precompute_store: empty catalog");
  std::vector<int> items(static_cast<std::size_t>(n_items));
  std::vector<int> cats(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) {
    items[static_cast<std::size_t>(i)] = i + 1;  // shifted table ids
    cats[static_cast<std::size_t>(i)] = item_cat[static_cast<std::size_t>(i)] + 1;
  }
  FitModel::ItemReps reps = model.item_reps(items, cats);
  const int width = model.store_heads() * model.store_dim();
  std::vector<ItemRecord> records(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) {
    ItemRecord& r = records[static_cast<std::size_t>(i)];
    r.id = static_cast<std::uint64_t>(i);
    r.s = static_cast<std::uint16_t>(reps.s[static_cast<std::size_t>(i)]);
    r.z.assign(reps.z.data() + static_cast<std::size_t>(i) * width,
               reps.z.data() + static_cast<std::size_t>(i + 1) * width);
  }
  const int n_meta = model.config().use_mqm ? model.config().n_meta : 1;
  ItemStore::write(out_path, records, model.store_heads(), model.store_dim(), n_meta);
}

std::vector<ScoredItem> serve_score(FitModel& model, const ItemStore& store,
                                    const ServeRequest& request) {
  Tensor Z = model.user_inference_stack(request.user);
  const int width = model.store_heads_u() * model.store_dim();
  std::vector<ScoredItem> out;
  out.reserve(request.candidates.size());
  for (std::uint64_t id : request.candidates) {
    ScoredItem item;
    item.id = id;
    const ItemRecord* rec = store.find(id);
    if (!rec) {
      item.error = "item id not in store";
      out.push_back(std::move(item));
      continue;
    }
    const int row = model.config().use_mqm ? static_cast<int>(rec->s) : 0;
    std::vector<float> zu(Z.data() + static_cast<std::size_t>(row) * width,
                          Z.data() + static_cast<std::size_t>(row + 1) * width);
    item.score = model.score_pair(zu, rec->z);
    item.ok = true;
    out.push_back(std::move(item));
  }
  return out;
}

BenchReport latency_bench(FitModel& model, const ItemStore& store, const UserContext& user,
                          const std::vector<std::uint64_t>& candidates,
                          const std::vector<int>& item_cat, int repetitions) {
  if (repetitions < 1) throw std::runtime_error("latency_bench: repetitions >= 1");
  BenchReport report;
  report.k = static_cast<int>(candidates.size());
  report.repetitions = repetitions;
  if (candidates.empty()) return report;

  // Two-tower path, phases timed separately.
  std::vector<double> user_times, cand_times;
  const int width = model.store_heads_u() * model.store_dim();
  float sink = 0.0f;
  for (int rep = 0; rep < repetitions + 1; ++rep) {  // first iteration warms caches
    const double t0 = now_ms();
    Tensor Z = model.user_inference_stack(user);
    const double t1 = now_ms();
    for (std::uint64_t id : candidates) {
      const ItemRecord* rec = store.find(id);
      if (!rec) continue;
      const int row = model.config().use_mqm ? static_cast<int>(rec->s) : 0;
      std::vector<float> zu(Z.data() + static_cast<std::size_t>(row) * width,
                            Z.data() + static_cast<std::size_t>(row + 1) * width);
      sink += model.score_pair(zu, rec->z);
    }
    const double t2 = now_ms();
    if (rep > 0) {
      user_times.push_back(t1 - t0);
      cand_times.push_back(t2 - t1);
    }
  }
  report.user_ms = median_of(user_times);
  report.cand_ms = median_of(cand_times);
  report.total_ms = report.user_ms + report.cand_ms;

  // Single-tower oracle: the joint forward runs once per candidate (one
  // batch of k rows re-running the full user side for every row).
  Batch batch;
  batch.size = report.k;
  batch.seq_len = std::max<int>(1, static_cast<int>(user.seq_items.size()));
  batch.user_ids.assign(static_cast<std::size_t>(batch.size), user.user_id);
  batch.seq_items.assign(static_cast<std::size_t>(batch.size) * batch.seq_len, 0);
  batch.seq_cats.assign(static_cast<std::size_t>(batch.size) * batch.seq_len, 0);
  batch.mask = Tensor::zeros({batch.size * batch.seq_len});
  batch.labels = Tensor::zeros({std::max(1, batch.size)});
  for (int i = 0; i < batch.size; ++i)
    for (std::size_t k = 0; k < user.seq_items.size(); ++k) {
      const std::size_t r = static_cast<std::size_t>(i) * batch.seq_len + k;
      batch.seq_items[r] = user.seq_items[k];
      batch.seq_cats[r] = user.seq_cats[k];
      batch.mask.data()[r] = 1.0f;
    }
  batch.cand_items.resize(static_cast<std::size_t>(batch.size));
  batch.cand_cats.resize(static_cast<std::size_t>(batch.size));
  for (int i = 0; i < batch.size; ++i) {
    const std::uint64_t id = candidates[static_cast<std::size_t>(i)];
    if (id >= item_cat.size())
      throw std::runtime_error("latency_bench: candidate id outside catalog");
    batch.cand_items[static_cast<std::size_t>(i)] = 1 + static_cast<int>(id);
    batch.cand_cats[static_cast<std::size_t>(i)] = 1 + item_cat[id];
  }
  std::vector<double> single_times;
  for (int rep = 0; rep < repetitions + 1; ++rep) {
    const double t0 = now_ms();
    FitModel::ForwardOut fwd =
        model.forward(batch, TemperatureSchedule{}.floor, /*training=*/false, nullptr);
    sink += fwd.logits.at(0);
    const double t1 = now_ms();
    if (rep > 0) single_times.push_back(t1 - t0);
  }
  report.single_tower_ms = median_of(single_times);
  report.speedup = report.total_ms > 0.0 ? report.single_tower_ms / report.total_ms : 0.0;
  (void)sink;
  return report;
}

double affine_r2(const std::vector<double>& ks, const std::vector<double>& ys) {
  if (ks.size() != ys.size() || ks.size() < 2)
    throw std::runtime_error("affine_r2: need >= 2 points");
  const double n = static_cast<double>(ks.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    sx += ks[i];
    sy += ys[i];
    sxx += ks[i] * ks[i];
    sxy += ks[i] * ys[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::runtime_error("affine_r2: degenerate x values");
  const double b = (n * sxy - sx * sy) / denom;
  const double a = (sy - b * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double mean_y = sy / n;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double fit = a + b * ks[i];
    ss_res += (ys[i] - fit) * (ys[i] - fit);
    ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
  }
  if (ss_tot == 0.0) return 1.0;
  return 1.0 - ss_res / ss_tot;
}

}  // namespace fit
