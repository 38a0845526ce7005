#pragma once
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cubecast/dataset.hpp"
#include "cubecast/metrics.hpp"
#include "cubecast/model.hpp"

namespace cubecast {

// Linear warmup from 0 to base_lr over the first warmup_frac of steps, then
// cosine decay back to 0 at total_steps. Continuous at the junction.
double lr_schedule(int64_t step, int64_t total_steps, double warmup_frac = 0.2,
                   double base_lr = 1e-3);

struct AdamwConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 1e-5;  // decoupled: p -= lr * wd * p, separate from the moment step
};

template <typename T>
struct AdamwState {
  AdamwConfig cfg;
  int64_t step = 0;
  std::vector<TensorT<T>> m, v;  // first/second moments, parameter-store order
};

template <typename T>
AdamwState<T> adamw_init(const ParamStore<T>& ps, AdamwConfig cfg = {});

// One bias-corrected update; grads must mirror the store's registration order.
template <typename T>
void adamw_step(ParamStore<T>& ps, const std::vector<TensorT<T>>& grads, AdamwState<T>& st,
                double lr);

// Scales grads in place so their global L2 norm is at most max_norm
// (max_norm <= 0 disables). Returns the pre-clip norm.
template <typename T>
double clip_global_norm(std::vector<TensorT<T>>& grads, double max_norm);

// Stops after `patience` consecutive epochs without strict improvement.
struct EarlyStopper {
  int64_t patience = 20;
  double best = 0;
  int64_t best_epoch = 0, stale = 0;
  bool seen = false;
  // Returns true when training should stop after this epoch.
  bool update(int64_t epoch, double val);
};

struct TrainConfig {
  double lr = 1e-3;
  AdamwConfig opt;
  int64_t batch = 64;  // effective batch, reached by gradient accumulation
  int64_t epochs = 100;
  double warmup_frac = 0.2;
  int64_t early_stop = 20;
  double clip_norm = 1.0;  // global-norm gradient clip, <= 0 disables
  uint64_t seed = 0;
  int64_t val_batch = 8;  // forward batching during validation
};

struct EpochRecord;
// Invoked after every epoch when set; purely observational.
using EpochCallback = std::function<void(const EpochRecord&)>;

struct EpochRecord {
  int64_t epoch = 0;  // 1-based
  double lr = 0;      // last learning rate applied in the epoch
  double train_loss = 0;  // mean per-element squared error over the epoch
  double val_mse = 0, val_mae = 0;  // frame-sum reporting convention
  int64_t wall_ms = 0;
};

std::string history_to_jsonl(const std::vector<EpochRecord>& history);

struct TrainResult {
  std::vector<EpochRecord> history;
  int64_t best_epoch = 0;  // epoch whose parameters the model ends up holding
  double best_val_mse = 0;
  bool early_stopped = false;
};

// Input frames [: t_in] and target frames [t_in :] of a dataset.
TensorT<float> dataset_inputs(const SequenceDataset& ds);
TensorT<float> dataset_targets(const SequenceDataset& ds);

// Shuffled epochs of per-sample backward passes accumulated to the effective
// batch, AdamW with the warmup+cosine schedule, validation MSE tracked per
// epoch, best parameters restored into the model on return. A non-finite
// training loss aborts with a diagnostic naming epoch and sample.
TrainResult train_model(Model<float>& m, const SequenceDataset& train_ds,
                        const SequenceDataset& val_ds, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {});

// Forecasts for every sample, [N, t_out, H, W, C]. Batches are independent,
// so the result is bit-identical for any thread count.
TensorT<float> model_forecast(const Model<float>& m, const SequenceDataset& ds,
                              int64_t val_batch = 8, int threads = 1);
// Baseline that repeats each sample's last input frame.
TensorT<float> persistence_forecast(const SequenceDataset& ds);

struct EvalReport {
  int64_t n = 0;
  std::vector<std::string> metrics;  // which of mse/mae/ssim/csi were computed
  double mse = 0, mae = 0, ssim_score = 0;
  CsiResult csi;
  CsiStepResult csi_step;
};

// metrics: subset of {"mse","mae","ssim","csi"}; unknown names are an error.
EvalReport evaluate_forecast(const TensorT<float>& pred, const SequenceDataset& ds,
                             const std::vector<std::string>& metrics);
std::string eval_report_to_json(const EvalReport& r);

}  // namespace cubecast
