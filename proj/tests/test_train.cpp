#include <doctest.h>

#include <cmath>
#include <cstring>
#include <nlohmann/json.hpp>
#include <vector>

#include "cubecast/glyphs.hpp"
#include "cubecast/model.hpp"
#include "cubecast/train.hpp"

using namespace cubecast;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.t_in = 2;
  cfg.t_out = 2;
  cfg.height = 8;
  cfg.width = 8;
  cfg.channels = {8};
  cfg.blocks = 1;
  cfg.globals = 2;
  cfg.init_downsample = 2;
  cfg.heads = 2;
  cfg.seed = 7;
  return cfg;
}

SequenceDataset tiny_dataset(int64_t n, uint64_t seed) {
  DatasetSpec spec;
  spec.n_samples = n;
  spec.t_in = 2;
  spec.t_out = 2;
  spec.size = 8;
  spec.seed = seed;
  return gen_nbody_mnist(spec, procedural_glyphs());
}

std::vector<float> param_bytes(const ParamStore<float>& ps) {
  std::vector<float> out;
  for (size_t i = 0; i < ps.size(); ++i) {
    const auto& t = ps.item(i).second;
    out.insert(out.end(), t.data(), t.data() + t.size());
  }
  return out;
}

}  // namespace

TEST_CASE("learning-rate schedule endpoints, midpoint, and continuity") {
  const double base = 1e-3;
  CHECK(lr_schedule(0, 100) == 0.0);
  CHECK(lr_schedule(20, 100) == base);            // warmup end
  CHECK(lr_schedule(100, 100) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(lr_schedule(60, 100) == doctest::Approx(base / 2).epsilon(1e-12));  // decay midpoint
  // continuous at the junction and monotone on either side
  CHECK(lr_schedule(19, 100) < lr_schedule(20, 100));
  CHECK(lr_schedule(21, 100) < lr_schedule(20, 100));
  CHECK(lr_schedule(20, 100) - lr_schedule(19, 100) == doctest::Approx(base / 20).epsilon(1e-9));
  for (int s = 1; s <= 20; ++s) CHECK(lr_schedule(s, 100) > lr_schedule(s - 1, 100));
  for (int s = 21; s <= 100; ++s) CHECK(lr_schedule(s, 100) < lr_schedule(s - 1, 100));
  CHECK_THROWS_WITH_AS((void)lr_schedule(101, 100), doctest::Contains("outside"),
                       std::runtime_error);
}

TEST_CASE("adamw: zero gradient leaves parameters alone except decoupled decay") {
  ParamStore<double> ps;
  Rng rng(1);
  ps.add("p", TensorT<double>::full({3}, 2.0));
  std::vector<TensorT<double>> zero{TensorT<double>({3})};
  zero[0].fill(0.0);

  AdamwConfig plain;
  plain.weight_decay = 0;
  auto st = adamw_init(ps, plain);
  adamw_step(ps, zero, st, 1e-3);
  for (int i = 0; i < 3; ++i) CHECK(ps.at("p").data()[i] == 2.0);

  AdamwConfig wd;
  wd.weight_decay = 1e-5;
  auto st2 = adamw_init(ps, wd);
  adamw_step(ps, zero, st2, 1e-3);
  for (int i = 0; i < 3; ++i)
    CHECK(ps.at("p").data()[i] == doctest::Approx(2.0 * (1 - 1e-3 * 1e-5)).epsilon(1e-14));
}

TEST_CASE("adamw single step matches the hand-computed update") {
  ParamStore<double> ps;
  ps.add("p", TensorT<double>::full({1}, 1.0));
  std::vector<TensorT<double>> g{TensorT<double>::full({1}, 1.0)};
  auto st = adamw_init(ps, AdamwConfig{});
  adamw_step(ps, g, st, 1e-3);
  const double m = 0.1, v = 0.001;
  const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
  double want = 1.0 - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8);
  want -= 1e-3 * 1e-5 * want;
  CHECK(ps.at("p").data()[0] == doctest::Approx(want).epsilon(1e-12));
  CHECK(st.step == 1);
}

TEST_CASE("one adamw step descends a convex quadratic for small learning rates") {
  for (double lr : {1e-3, 1e-4}) {
    ParamStore<double> ps;
    TensorT<double> init({2});
    init.data()[0] = 1.0;
    init.data()[1] = -2.0;
    ps.add("p", init.clone());
    AdamwConfig cfg;
    cfg.weight_decay = 0;
    auto st = adamw_init(ps, cfg);
    auto loss = [&] {
      double s = 0;
      for (int i = 0; i < 2; ++i) s += 0.5 * ps.at("p").data()[i] * ps.at("p").data()[i];
      return s;
    };
    const double before = loss();
    std::vector<TensorT<double>> g{ps.at("p").clone()};  // grad of the quadratic is p
    adamw_step(ps, g, st, lr);
    CHECK(loss() < before);
  }
}

TEST_CASE("global-norm clipping rescales exactly at the threshold") {
  std::vector<TensorT<double>> g{TensorT<double>::full({4}, 1.0)};  // norm 2
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(2.0).epsilon(1e-12));
  double sq = 0;
  for (int i = 0; i < 4; ++i) sq += g[0].data()[i] * g[0].data()[i];
  CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<TensorT<double>> small{TensorT<double>::full({4}, 0.1)};
  const auto before = small[0].clone();
  CHECK(clip_global_norm(small, 1.0) == doctest::Approx(0.2).epsilon(1e-12));
  for (int i = 0; i < 4; ++i) CHECK(small[0].data()[i] == before.data()[i]);

  std::vector<TensorT<double>> off{TensorT<double>::full({4}, 10.0)};
  clip_global_norm(off, -1.0);  // disabled
  for (int i = 0; i < 4; ++i) CHECK(off[0].data()[i] == 10.0);
}

TEST_CASE("early stopping fires after exactly the configured stale streak") {
  EarlyStopper stop;
  stop.patience = 20;
  CHECK_FALSE(stop.update(1, 5.0));
  CHECK_FALSE(stop.update(2, 4.0));  // improvement
  CHECK_FALSE(stop.update(3, 3.0));  // improvement at epoch 3
  for (int e = 4; e < 23; ++e) CHECK_FALSE(stop.update(e, 3.0));  // 19 stale epochs
  CHECK(stop.update(23, 3.0));  // the 20th stale epoch fires
  CHECK(stop.best_epoch == 3);
  CHECK(stop.best == 3.0);

  EarlyStopper reset;
  reset.patience = 2;
  CHECK_FALSE(reset.update(1, 1.0));
  CHECK_FALSE(reset.update(2, 2.0));
  CHECK_FALSE(reset.update(3, 0.5));  // improvement resets the streak
  CHECK_FALSE(reset.update(4, 0.6));
  CHECK(reset.update(5, 0.6));
}

TEST_CASE("dataset splitting and the persistence baseline") {
  SequenceDataset ds = tiny_dataset(3, 5);
  const auto& s = ds.data.shape();
  const TensorT<float> x = dataset_inputs(ds);
  const TensorT<float> y = dataset_targets(ds);
  CHECK(x.shape() == Shape{3, 2, 8, 8, 1});
  CHECK(y.shape() == Shape{3, 2, 8, 8, 1});
  const int64_t fb = s[2] * s[3] * s[4];
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(std::memcmp(x.data() + i * 2 * fb, ds.data.data() + i * 4 * fb,
                      sizeof(float) * size_t(2 * fb)) == 0);
    CHECK(std::memcmp(y.data() + i * 2 * fb, ds.data.data() + (i * 4 + 2) * fb,
                      sizeof(float) * size_t(2 * fb)) == 0);
  }

  const TensorT<float> pred = persistence_forecast(ds);
  CHECK(pred.shape() == y.shape());
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t t = 0; t < 2; ++t)
      CHECK(std::memcmp(pred.data() + (i * 2 + t) * fb, ds.data.data() + (i * 4 + 1) * fb,
                        sizeof(float) * size_t(fb)) == 0);

  // a time-constant sequence scores 0 against persistence
  SequenceDataset still = ds;
  still.data = ds.data.clone();
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t t = 1; t < 4; ++t)
      std::memcpy(still.data.data() + (i * 4 + t) * fb, still.data.data() + i * 4 * fb,
                  sizeof(float) * size_t(fb));
  CHECK(mse_report(persistence_forecast(still), dataset_targets(still)) == 0.0);
}

TEST_CASE("a perfect forecast gets perfect scores and a clean JSON report") {
  DatasetSpec spec;
  spec.n_samples = 2;
  spec.t_in = 2;
  spec.t_out = 2;
  spec.size = 16;
  spec.seed = 3;
  const SequenceDataset ds = gen_nbody_mnist(spec, procedural_glyphs());
  const TensorT<float> truth = dataset_targets(ds);
  const EvalReport r = evaluate_forecast(truth, ds, {"mse", "mae", "ssim", "csi"});
  CHECK(r.n == 2);
  CHECK(r.mse == 0.0);
  CHECK(r.mae == 0.0);
  CHECK(r.ssim_score == doctest::Approx(1.0).epsilon(1e-9));
  for (double v : r.csi.per_threshold) CHECK(v == 1.0);
  CHECK(r.csi.csi_m == 1.0);
  CHECK(r.csi_step.csi_m6 == 1.0);

  const auto j = nlohmann::json::parse(eval_report_to_json(r));
  CHECK(j.at("n") == 2);
  CHECK(j.at("mse") == 0.0);
  CHECK(j.at("ssim") == 1.0);
  CHECK(j.at("csi").at("csi_m") == 1.0);
  CHECK(j.at("csi").at("per_threshold").size() == 6);

  CHECK_THROWS_WITH_AS((void)evaluate_forecast(truth, ds, {"psnr"}),
                       doctest::Contains("unknown metric"), std::runtime_error);
}

TEST_CASE("zero learning rate leaves parameters bit-identical across epochs") {
  Model<float> m = build_model<float>(tiny_config());
  const auto init = param_bytes(m.ps);
  TrainConfig cfg;
  cfg.lr = 0;
  cfg.batch = 4;
  cfg.epochs = 3;
  cfg.early_stop = 100;
  cfg.seed = 9;
  const SequenceDataset tr = tiny_dataset(6, 1), va = tiny_dataset(4, 2);
  const TrainResult res = train_model(m, tr, va, cfg);
  REQUIRE(res.history.size() == 3);
  CHECK(res.history[1].val_mse == res.history[0].val_mse);
  CHECK(res.history[2].val_mse == res.history[0].val_mse);
  CHECK(res.history[1].train_loss == res.history[0].train_loss);
  const auto after = param_bytes(m.ps);
  CHECK(std::memcmp(init.data(), after.data(), sizeof(float) * init.size()) == 0);
}

TEST_CASE("training runs deterministically and reduces loss on a tiny problem") {
  TrainConfig cfg;
  cfg.lr = 2e-3;
  cfg.batch = 4;
  cfg.epochs = 5;
  cfg.early_stop = 100;
  cfg.seed = 4;
  const SequenceDataset tr = tiny_dataset(8, 11), va = tiny_dataset(4, 12);

  Model<float> m1 = build_model<float>(tiny_config());
  const TrainResult r1 = train_model(m1, tr, va, cfg);
  Model<float> m2 = build_model<float>(tiny_config());
  const TrainResult r2 = train_model(m2, tr, va, cfg);

  REQUIRE(r1.history.size() == 5);
  CHECK(r1.history.back().train_loss < r1.history.front().train_loss);
  for (const EpochRecord& rec : r1.history) CHECK(std::isfinite(rec.train_loss));
  for (size_t i = 0; i + 1 < r1.history.size(); ++i) CHECK(r1.history[i].lr > 0);
  CHECK(r1.history.back().lr == 0.0);  // cosine reaches exactly 0 on the final update
  REQUIRE(r2.history.size() == r1.history.size());
  for (size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].train_loss == r2.history[i].train_loss);  // bitwise reproducible
    CHECK(r1.history[i].val_mse == r2.history[i].val_mse);
    CHECK(r1.history[i].lr == r2.history[i].lr);
  }
  const auto p1 = param_bytes(m1.ps), p2 = param_bytes(m2.ps);
  CHECK(std::memcmp(p1.data(), p2.data(), sizeof(float) * p1.size()) == 0);

  const std::string jl = history_to_jsonl(r1.history);
  size_t lines = 0;
  for (char c : jl) lines += c == '\n';
  CHECK(lines == 5);
  const auto first = nlohmann::json::parse(jl.substr(0, jl.find('\n')));
  CHECK(first.at("epoch") == 1);
  CHECK(first.at("train_loss") == r1.history[0].train_loss);
  CHECK(first.contains("wall_ms"));
}

TEST_CASE("early stopping truncates training and the best epoch is restored") {
  Model<float> m = build_model<float>(tiny_config());
  TrainConfig cfg;
  cfg.lr = 0;  // constant validation -> epoch 1 is best, everything after is stale
  cfg.batch = 4;
  cfg.epochs = 10;
  cfg.early_stop = 2;
  const TrainResult res = train_model(m, tiny_dataset(4, 21), tiny_dataset(2, 22), cfg);
  CHECK(res.early_stopped);
  CHECK(res.history.size() == 3);  // epoch 1 best + 2 stale
  CHECK(res.best_epoch == 1);
  CHECK(res.best_val_mse == res.history[0].val_mse);
}

TEST_CASE("non-finite losses abort with a diagnostic") {
  Model<float> m = build_model<float>(tiny_config());
  m.ps.at("head.lin.b").data()[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.epochs = 1;
  // the op-level guard fires first and names the operation that produced it
  CHECK_THROWS_WITH_AS((void)train_model(m, tiny_dataset(2, 31), tiny_dataset(2, 32), cfg),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("shape mismatches between data and model are diagnosed") {
  Model<float> m = build_model<float>(tiny_config());
  DatasetSpec spec;
  spec.n_samples = 2;
  spec.t_in = 2;
  spec.t_out = 2;
  spec.size = 16;  // model expects 8
  const SequenceDataset wrong = gen_nbody_mnist(spec, procedural_glyphs());
  CHECK_THROWS_WITH_AS((void)train_model(m, wrong, wrong, TrainConfig{}),
                       doctest::Contains("does not match model"), std::runtime_error);
  CHECK_THROWS_WITH_AS((void)model_forecast(m, wrong), doctest::Contains("does not match model"),
                       std::runtime_error);
}
