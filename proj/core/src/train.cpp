#include "cubecast/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "cubecast/ops.hpp"
#include "cubecast/rng.hpp"

namespace cubecast {

double lr_schedule(int64_t step, int64_t total_steps, double warmup_frac, double base_lr) {
  if (total_steps <= 0) throw std::runtime_error("lr_schedule needs positive total_steps");
  if (step < 0 || step > total_steps)
    throw std::runtime_error("lr_schedule step outside [0, total_steps]");
  const double warm = warmup_frac * double(total_steps);
  if (double(step) < warm && warm > 0) return base_lr * double(step) / warm;
  if (double(total_steps) - warm <= 0) return base_lr;
  const double u = (double(step) - warm) / (double(total_steps) - warm);
  return base_lr * 0.5 * (1.0 + std::cos(u * 3.14159265358979323846));
}

template <typename T>
AdamwState<T> adamw_init(const ParamStore<T>& ps, AdamwConfig cfg) {
  AdamwState<T> st;
  st.cfg = cfg;
  for (size_t i = 0; i < ps.size(); ++i) {
    st.m.push_back(TensorT<T>(ps.item(i).second.shape()));
    st.v.push_back(TensorT<T>(ps.item(i).second.shape()));
    st.m.back().fill(T(0));
    st.v.back().fill(T(0));
  }
  return st;
}

template <typename T>
void adamw_step(ParamStore<T>& ps, const std::vector<TensorT<T>>& grads, AdamwState<T>& st,
                double lr) {
  if (grads.size() != ps.size() || st.m.size() != ps.size())
    throw std::runtime_error("adamw_step gradient list does not match the parameter store");
  st.step += 1;
  const double b1 = st.cfg.beta1, b2 = st.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, double(st.step));
  const double bc2 = 1.0 - std::pow(b2, double(st.step));
  for (size_t i = 0; i < ps.size(); ++i) {
    TensorT<T>& p = ps.at(ps.item(i).first);
    if (grads[i].shape() != p.shape())
      throw std::runtime_error("adamw_step gradient shape mismatch for '" + ps.item(i).first +
                               "'");
    T* pd = p.data();
    T* md = st.m[i].data();
    T* vd = st.v[i].data();
    const T* gd = grads[i].data();
    for (int64_t j = 0; j < p.size(); ++j) {
      const double g = double(gd[j]);
      const double m = b1 * double(md[j]) + (1 - b1) * g;
      const double v = b2 * double(vd[j]) + (1 - b2) * g * g;
      md[j] = T(m);
      vd[j] = T(v);
      double x = double(pd[j]) - lr * (m / bc1) / (std::sqrt(v / bc2) + st.cfg.eps);
      x -= lr * st.cfg.weight_decay * x;  // decoupled decay
      pd[j] = T(x);
    }
  }
}

template <typename T>
double clip_global_norm(std::vector<TensorT<T>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (int64_t j = 0; j < g.size(); ++j) sq += double(g.data()[j]) * double(g.data()[j]);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T scale = T(max_norm / norm);
    for (auto& g : grads)
      for (int64_t j = 0; j < g.size(); ++j) g.data()[j] *= scale;
  }
  return norm;
}

bool EarlyStopper::update(int64_t epoch, double val) {
  if (!seen || val < best) {
    seen = true;
    best = val;
    best_epoch = epoch;
    stale = 0;
  } else {
    ++stale;
  }
  return stale >= patience;
}

namespace {

void split_frames(const SequenceDataset& ds, int64_t from, int64_t count, TensorT<float>& out) {
  const auto& s = ds.data.shape();
  const int64_t n = s[0], frames = s[1], fb = s[2] * s[3] * s[4];
  out = TensorT<float>({n, count, s[2], s[3], s[4]});
  for (int64_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * count * fb, ds.data.data() + (i * frames + from) * fb,
                sizeof(float) * size_t(count * fb));
}

void check_compat(const Model<float>& m, const SequenceDataset& ds, const char* what) {
  const auto& s = ds.data.shape();
  if (s.size() != 5 || ds.t_in != m.cfg.t_in || ds.t_out != m.cfg.t_out ||
      s[2] != m.cfg.height || s[3] != m.cfg.width || s[4] != m.cfg.c_in ||
      m.cfg.c_in != m.cfg.c_out)
    throw std::runtime_error(std::string(what) + " dataset " + shape_str(s) + " (t_in " +
                             std::to_string(ds.t_in) + ", t_out " + std::to_string(ds.t_out) +
                             ") does not match model expecting t_in " +
                             std::to_string(m.cfg.t_in) + ", t_out " +
                             std::to_string(m.cfg.t_out) + ", frames " +
                             std::to_string(m.cfg.height) + "x" + std::to_string(m.cfg.width) +
                             "x" + std::to_string(m.cfg.c_in));
}

std::vector<TensorT<float>> snapshot(const ParamStore<float>& ps) {
  std::vector<TensorT<float>> out;
  for (size_t i = 0; i < ps.size(); ++i) out.push_back(ps.item(i).second.clone());
  return out;
}

void restore(ParamStore<float>& ps, const std::vector<TensorT<float>>& snap) {
  for (size_t i = 0; i < ps.size(); ++i) {
    TensorT<float>& p = ps.at(ps.item(i).first);
    std::memcpy(p.data(), snap[i].data(), sizeof(float) * size_t(p.size()));
  }
}

}  // namespace

TensorT<float> dataset_inputs(const SequenceDataset& ds) {
  TensorT<float> out;
  split_frames(ds, 0, ds.t_in, out);
  return out;
}

TensorT<float> dataset_targets(const SequenceDataset& ds) {
  TensorT<float> out;
  split_frames(ds, ds.t_in, ds.t_out, out);
  return out;
}

TensorT<float> model_forecast(const Model<float>& m, const SequenceDataset& ds,
                              int64_t val_batch) {
  check_compat(m, ds, "forecast");
  if (val_batch < 1) throw std::runtime_error("forecast needs val_batch >= 1");
  const TensorT<float> x = dataset_inputs(ds);
  const auto& s = x.shape();
  const int64_t n = s[0], in_slab = x.size() / n;
  TensorT<float> pred({n, ds.t_out, s[2], s[3], s[4]});
  const int64_t out_slab = pred.size() / n;
  const int64_t nchunks = (n + val_batch - 1) / val_batch;
  parallel_for(nchunks, threads, [&](int64_t ci) {
    const int64_t at = ci * val_batch;
    const int64_t b = std::min(val_batch, n - at);
    TensorT<float> chunk({b, ds.t_in, s[2], s[3], s[4]});
    std::memcpy(chunk.data(), x.data() + at * in_slab, sizeof(float) * size_t(b * in_slab));
    const TensorT<float> y = predict_batch(m, chunk);
    std::memcpy(pred.data() + at * out_slab, y.data(), sizeof(float) * size_t(b * out_slab));
  });
  return pred;
}

TensorT<float> persistence_forecast(const SequenceDataset& ds) {
  const auto& s = ds.data.shape();
  const int64_t n = s[0], frames = s[1], fb = s[2] * s[3] * s[4];
  TensorT<float> pred({n, ds.t_out, s[2], s[3], s[4]});
  for (int64_t i = 0; i < n; ++i) {
    const float* last = ds.data.data() + (i * frames + ds.t_in - 1) * fb;
    for (int64_t t = 0; t < ds.t_out; ++t)
      std::memcpy(pred.data() + (i * ds.t_out + t) * fb, last, sizeof(float) * size_t(fb));
  }
  return pred;
}

TrainResult train_model(Model<float>& m, const SequenceDataset& train_ds,
                        const SequenceDataset& val_ds, const TrainConfig& cfg) {
  check_compat(m, train_ds, "train");
  check_compat(m, val_ds, "validation");
  if (cfg.batch < 1 || cfg.epochs < 1) throw std::runtime_error("train needs batch, epochs >= 1");
  const TensorT<float> x = dataset_inputs(train_ds);
  const TensorT<float> y = dataset_targets(train_ds);
  const TensorT<float> val_y = dataset_targets(val_ds);
  const auto& s = x.shape();
  const int64_t n = s[0], in_slab = x.size() / n, out_slab = y.size() / n;
  const int64_t updates_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const int64_t total_updates = updates_per_epoch * cfg.epochs;

  AdamwState<float> opt = adamw_init(m.ps, cfg.opt);
  std::vector<TensorT<float>> accum;
  for (size_t i = 0; i < m.ps.size(); ++i) accum.push_back(TensorT<float>(m.ps.item(i).second.shape()));

  TrainResult res;
  EarlyStopper stop;
  stop.patience = cfg.early_stop;
  std::vector<TensorT<float>> best = snapshot(m.ps);
  res.best_val_mse = std::numeric_limits<double>::infinity();
  int64_t update_index = 0;

  std::vector<int64_t> order;
  order.resize(size_t(n));
  for (int64_t i = 0; i < n; ++i) order[size_t(i)] = i;

  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(mix_seed(cfg.seed, uint64_t(epoch)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(rng.uniform_int(int64_t(i)))]);

    double epoch_loss = 0;
    double last_lr = 0;
    for (int64_t at = 0; at < n; at += cfg.batch) {
      const int64_t b = std::min(cfg.batch, n - at);
      for (auto& g : accum) g.fill(0.0f);
      for (int64_t k = 0; k < b; ++k) {
        const int64_t idx = order[size_t(at + k)];
        Tape<float> tape;
        Binder<float> bind(&tape);
        TensorT<float> xi({m.cfg.t_in, s[2], s[3], s[4]});
        std::memcpy(xi.data(), x.data() + idx * in_slab, sizeof(float) * size_t(in_slab));
        TensorT<float> yi({m.cfg.t_out, s[2], s[3], s[4]});
        std::memcpy(yi.data(), y.data() + idx * out_slab, sizeof(float) * size_t(out_slab));
        const Var<float> loss = mse_mean(model_forward(bind, m, make_leaf(tape, xi)), yi);
        const double lv = double(loss.val.data()[0]);
        if (!std::isfinite(lv))
          throw std::runtime_error("non-finite training loss at epoch " +
                                   std::to_string(epoch) + ", sample " + std::to_string(idx));
        epoch_loss += lv;
        tape.backward(loss.node);
        for (size_t p = 0; p < m.ps.size(); ++p) {
          const int node = bind.node_of(m.ps.item(p).second);
          const TensorT<float>* g = node >= 0 ? tape.grad(node) : nullptr;
          if (!g) continue;
          float* a = accum[p].data();
          const float* gd = g->data();
          for (int64_t j = 0; j < accum[p].size(); ++j) a[j] += gd[j];
        }
      }
      const float inv = 1.0f / float(b);
      for (auto& g : accum)
        for (int64_t j = 0; j < g.size(); ++j) g.data()[j] *= inv;
      clip_global_norm(accum, cfg.clip_norm);
      ++update_index;
      last_lr = lr_schedule(update_index, total_updates, cfg.warmup_frac, cfg.lr);
      adamw_step(m.ps, accum, opt, last_lr);
    }

    const TensorT<float> val_pred = model_forecast(m, val_ds, cfg.val_batch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = last_lr;
    rec.train_loss = epoch_loss / double(n);
    rec.val_mse = mse_report(val_pred, val_y);
    rec.val_mae = mae_report(val_pred, val_y);
    rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    res.history.push_back(rec);

    if (rec.val_mse < res.best_val_mse) {
      res.best_val_mse = rec.val_mse;
      res.best_epoch = epoch;
      best = snapshot(m.ps);
    }
    if (stop.update(epoch, rec.val_mse)) {
      res.early_stopped = true;
      break;
    }
  }
  restore(m.ps, best);
  return res;
}

std::string history_to_jsonl(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const EpochRecord& r : history) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j["train_loss"] = r.train_loss;
    j["val_mse"] = r.val_mse;
    j["val_mae"] = r.val_mae;
    j["wall_ms"] = r.wall_ms;
    out += j.dump();
    out += '\n';
  }
  return out;
}

EvalReport evaluate_forecast(const TensorT<float>& pred, const SequenceDataset& ds,
                             const std::vector<std::string>& metrics) {
  const TensorT<float> target = dataset_targets(ds);
  if (pred.shape() != target.shape())
    throw std::runtime_error("forecast " + shape_str(pred.shape()) +
                             " does not match dataset targets " + shape_str(target.shape()));
  EvalReport r;
  r.n = pred.shape()[0];
  r.metrics = metrics;
  for (const std::string& name : metrics) {
    if (name == "mse")
      r.mse = mse_report(pred, target);
    else if (name == "mae")
      r.mae = mae_report(pred, target);
    else if (name == "ssim")
      r.ssim_score = ssim(pred, target);
    else if (name == "csi") {
      r.csi = csi_pooled(pred, target, CsiConfig{});
      r.csi_step = csi_per_step(pred, target, CsiConfig{});
    } else {
      throw std::runtime_error("unknown metric '" + name + "'");
    }
  }
  return r;
}

std::string eval_report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  for (const std::string& name : r.metrics) {
    if (name == "mse") j["mse"] = r.mse;
    if (name == "mae") j["mae"] = r.mae;
    if (name == "ssim") j["ssim"] = r.ssim_score;
    if (name == "csi") {
      nlohmann::ordered_json c;
      c["thresholds"] = CsiConfig{}.thresholds;
      c["per_threshold"] = r.csi.per_threshold;
      c["csi_m"] = r.csi.csi_m;
      c["per_step_threshold_means"] = r.csi_step.per_threshold;
      c["csi_m3"] = r.csi_step.csi_m3;
      c["csi_m6"] = r.csi_step.csi_m6;
      j["csi"] = c;
    }
  }
  return j.dump(2);
}

template AdamwState<float> adamw_init(const ParamStore<float>&, AdamwConfig);
template AdamwState<double> adamw_init(const ParamStore<double>&, AdamwConfig);
template void adamw_step(ParamStore<float>&, const std::vector<TensorT<float>>&,
                         AdamwState<float>&, double);
template void adamw_step(ParamStore<double>&, const std::vector<TensorT<double>>&,
                         AdamwState<double>&, double);
template double clip_global_norm(std::vector<TensorT<float>>&, double);
template double clip_global_norm(std::vector<TensorT<double>>&, double);

}  // namespace cubecast
