#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "cubecast/metrics.hpp"
#include "cubecast/rng.hpp"
#include "cubecast/tensor.hpp"

using namespace cubecast;

namespace {

TensorT<float> from_bytes(const Shape& shape, const std::vector<int>& bytes) {
  TensorT<float> t(shape);
  REQUIRE(t.size() == int64_t(bytes.size()));
  for (size_t i = 0; i < bytes.size(); ++i) t.data()[i] = float(bytes[i]) / 255.0f;
  return t;
}

TensorT<float> rand_bytes(const Shape& shape, Rng& rng) {
  TensorT<float> t(shape);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = float(rng.uniform_int(256)) / 255.0f;
  return t;
}

// Independent counting oracle: recovers the integer pixel value and compares
// against integer thresholds directly, one threshold at a time.
struct OracleCounts {
  int64_t hits = 0, misses = 0, fa = 0;
};

OracleCounts count_range(const TensorT<float>& pred, const TensorT<float>& target, double tau,
                         int64_t lo, int64_t hi) {
  OracleCounts c;
  for (int64_t i = lo; i < hi; ++i) {
    const bool pe = llround(double(pred.data()[i]) * 255.0) >= llround(tau);
    const bool te = llround(double(target.data()[i]) * 255.0) >= llround(tau);
    if (pe && te) ++c.hits;
    if (!pe && te) ++c.misses;
    if (pe && !te) ++c.fa;
  }
  return c;
}

double oracle_csi(OracleCounts c) {
  const int64_t den = c.hits + c.misses + c.fa;
  return den == 0 ? 0.0 : double(c.hits) / double(den);
}

}  // namespace

TEST_CASE("reported MSE and MAE follow the frame-sum convention") {
  TensorT<float> target({1, 1, 2, 2, 1});
  TensorT<float> pred({1, 1, 2, 2, 1});
  for (int i = 0; i < 4; ++i) {
    target.data()[i] = 0.25f;
    pred.data()[i] = 0.75f;  // off by 0.5 everywhere
  }
  CHECK(mse_report(pred, target) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mae_report(pred, target) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(mse_elementwise(pred, target) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(mse_report(target, target) == 0.0);
  CHECK(mae_report(target, target) == 0.0);

  // reported = elementwise * pixels-per-frame, for any frame count
  Rng rng(11);
  const Shape s{2, 3, 4, 5, 1};
  const auto a = rand_bytes(s, rng), b = rand_bytes(s, rng);
  CHECK(mse_report(a, b) == doctest::Approx(mse_elementwise(a, b) * 4 * 5).epsilon(1e-12));

  TensorT<float> other({1, 1, 2, 3, 1});
  CHECK_THROWS_WITH_AS((void)mse_report(pred, other), doctest::Contains("mismatch"),
                       std::runtime_error);
  TensorT<float> flat({4});
  CHECK_THROWS_WITH_AS((void)mse_report(flat, flat), doctest::Contains("[N,T,H,W,C]"),
                       std::runtime_error);
}

TEST_CASE("ssim is 1 on identical frames and matches the constant closed form") {
  Rng rng(3);
  TensorT<float> x({2, 2, 16, 16, 1});
  for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = float(rng.uniform(0.0, 1.0));
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));

  TensorT<float> a({1, 1, 12, 12, 1}), b({1, 1, 12, 12, 1});
  for (int64_t i = 0; i < a.size(); ++i) {
    a.data()[i] = 0.5f;
    b.data()[i] = 0.6f;
  }
  const double mx = 0.5, my = double(0.6f);
  const double closed = (2 * mx * my + 1e-4) / (mx * mx + my * my + 1e-4);
  CHECK(ssim(a, b) == doctest::Approx(closed).epsilon(1e-9));
}

TEST_CASE("ssim on an inverted binary pattern is near its minimum") {
  TensorT<float> x({1, 1, 16, 16, 1}), inv({1, 1, 16, 16, 1});
  for (int64_t r = 0; r < 16; ++r)
    for (int64_t c = 0; c < 16; ++c) {
      const float v = float((r + c) % 2);
      x.data()[r * 16 + c] = v;
      inv.data()[r * 16 + c] = 1.0f - v;
    }
  CHECK(ssim(x, inv) < 0.1);
}

TEST_CASE("ssim rejects unusable frame geometry") {
  TensorT<float> tiny({1, 1, 8, 8, 1});
  CHECK_THROWS_WITH_AS((void)ssim(tiny, tiny), doctest::Contains("11x11"), std::runtime_error);
  TensorT<float> wide({1, 1, 16, 16, 2});
  CHECK_THROWS_WITH_AS((void)ssim(wide, wide), doctest::Contains("single-channel"),
                       std::runtime_error);
}

TEST_CASE("pooled CSI matches the handcrafted 2x2 example on default thresholds") {
  const auto target = from_bytes({1, 1, 2, 2, 1}, {200, 100, 10, 0});
  const auto pred = from_bytes({1, 1, 2, 2, 1}, {190, 10, 10, 0});
  const CsiResult r = csi_pooled(pred, target, CsiConfig{});
  REQUIRE(r.per_threshold.size() == 6);
  CHECK(r.per_threshold[0] == 0.5);  // tau 16: hit 200, miss 100
  CHECK(r.per_threshold[1] == 0.5);  // tau 74
  CHECK(r.per_threshold[2] == 1.0);  // tau 133: single hit
  CHECK(r.per_threshold[3] == 1.0);
  CHECK(r.per_threshold[4] == 1.0);
  CHECK(r.per_threshold[5] == 0.0);  // tau 219: nothing exceeds -> empty denominator
  CHECK(r.csi_m == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("pooled CSI edge behavior") {
  const auto truth = from_bytes({1, 1, 2, 2, 1}, {255, 255, 0, 30});
  const CsiResult perfect = csi_pooled(truth, truth, CsiConfig{});
  for (double v : perfect.per_threshold) CHECK(v == 1.0);
  CHECK(perfect.csi_m == 1.0);

  const auto zeros = from_bytes({1, 1, 2, 2, 1}, {0, 0, 0, 0});
  const CsiResult miss = csi_pooled(zeros, truth, CsiConfig{});
  for (double v : miss.per_threshold) CHECK(v == 0.0);
  const CsiResult empty = csi_pooled(zeros, zeros, CsiConfig{});
  for (double v : empty.per_threshold) CHECK(v == 0.0);  // defined as 0

  CHECK_THROWS_WITH_AS((void)csi_pooled(zeros, zeros, CsiConfig{{16, 16}}),
                       doctest::Contains("strictly increasing"), std::runtime_error);
  CHECK_THROWS_WITH_AS((void)csi_pooled(zeros, zeros, CsiConfig{{0, 74}}),
                       doctest::Contains("(0,255]"), std::runtime_error);
  CHECK_THROWS_WITH_AS((void)csi_pooled(zeros, zeros, CsiConfig{{}}),
                       doctest::Contains("at least one"), std::runtime_error);
}

TEST_CASE("quantized values land exactly on integer thresholds") {
  // value 133/255 stored as float must still count as exceeding tau=133
  const auto v = from_bytes({1, 1, 1, 1, 1}, {133});
  const CsiResult r = csi_pooled(v, v, CsiConfig{{133}});
  CHECK(r.per_threshold[0] == 1.0);
  const auto below = from_bytes({1, 1, 1, 1, 1}, {132});
  CHECK(csi_pooled(below, below, CsiConfig{{133}}).per_threshold[0] == 0.0);
}

TEST_CASE("both CSI modes match the counting oracle on random byte tensors") {
  Rng rng(77);
  const CsiConfig cfg;
  for (int rep = 0; rep < 120; ++rep) {
    const Shape s{2, 3, 4, 4, 1};
    const auto pred = rand_bytes(s, rng), target = rand_bytes(s, rng);
    const CsiResult pool = csi_pooled(pred, target, cfg);
    const CsiStepResult step = csi_per_step(pred, target, cfg);
    const int64_t per = 4 * 4, steps = 3, n = 2;
    for (size_t j = 0; j < cfg.thresholds.size(); ++j) {
      CHECK(pool.per_threshold[j] ==
            oracle_csi(count_range(pred, target, cfg.thresholds[j], 0, pred.size())));
      double avg = 0;
      for (int64_t t = 0; t < steps; ++t) {
        OracleCounts c;
        for (int64_t i = 0; i < n; ++i) {
          const OracleCounts part = count_range(pred, target, cfg.thresholds[j],
                                                (i * steps + t) * per, (i * steps + t + 1) * per);
          c.hits += part.hits;
          c.misses += part.misses;
          c.fa += part.fa;
        }
        CHECK(step.per_step[j][size_t(t)] == oracle_csi(c));
        avg += oracle_csi(c);
      }
      CHECK(step.per_threshold[j] == doctest::Approx(avg / steps).epsilon(1e-15));
    }
    // CSI-M is exactly the arithmetic mean in both modes
    double m = 0, m3 = 0, m6 = 0;
    for (double v : pool.per_threshold) m += v;
    CHECK(pool.csi_m == m / 6.0);
    for (size_t j = 0; j < 3; ++j) m3 += step.per_threshold[j];
    for (double v : step.per_threshold) m6 += v;
    CHECK(step.csi_m3 == m3 / 3.0);
    CHECK(step.csi_m6 == m6 / 6.0);
  }
}

TEST_CASE("every pred/target pair over a 3-pixel {0,80,200} grid matches the oracle") {
  const int vals[3] = {0, 80, 200};
  const CsiConfig cfg;
  for (int p = 0; p < 27; ++p)
    for (int t = 0; t < 27; ++t) {
      std::vector<int> pb{vals[p % 3], vals[(p / 3) % 3], vals[(p / 9) % 3]};
      std::vector<int> tb{vals[t % 3], vals[(t / 3) % 3], vals[(t / 9) % 3]};
      const auto pred = from_bytes({1, 1, 1, 3, 1}, pb);
      const auto target = from_bytes({1, 1, 1, 3, 1}, tb);
      const CsiResult r = csi_pooled(pred, target, cfg);
      for (size_t j = 0; j < cfg.thresholds.size(); ++j)
        CHECK(r.per_threshold[j] ==
              oracle_csi(count_range(pred, target, cfg.thresholds[j], 0, 3)));
    }
}

TEST_CASE("per-step CSI distinguishes its convention from pooling") {
  // step 0: hit + miss (CSI 1/2); step 1: hit only (CSI 1)
  const auto target = from_bytes({1, 2, 1, 2, 1}, {200, 200, 200, 0});
  const auto pred = from_bytes({1, 2, 1, 2, 1}, {200, 0, 200, 0});
  const CsiConfig one{{133}};
  CHECK(csi_per_step(pred, target, one).per_threshold[0] == 0.75);  // (1/2 + 1) / 2
  CHECK(csi_pooled(pred, target, one).per_threshold[0] == doctest::Approx(2.0 / 3).epsilon(1e-15));

  // time-constant fields collapse the two conventions
  const auto c0 = from_bytes({1, 2, 1, 2, 1}, {200, 90, 200, 90});
  const auto c1 = from_bytes({1, 2, 1, 2, 1}, {180, 10, 180, 10});
  const CsiResult pool = csi_pooled(c1, c0, CsiConfig{});
  const CsiStepResult step = csi_per_step(c1, c0, CsiConfig{});
  for (size_t j = 0; j < 6; ++j) CHECK(pool.per_threshold[j] == step.per_threshold[j]);
}

TEST_CASE("nino weights follow the banded log formula") {
  const auto a = nino_weights(13);
  REQUIRE(a.size() == 13);
  CHECK(a[0] == 0.0);  // 1.5 * ln 1
  for (int k = 1; k <= 4; ++k) CHECK(a[size_t(k - 1)] == 1.5 * std::log(double(k)));
  for (int k = 5; k <= 11; ++k) CHECK(a[size_t(k - 1)] == 2.0 * std::log(double(k)));
  for (int k = 12; k <= 13; ++k) CHECK(a[size_t(k - 1)] == 3.0 * std::log(double(k)));
  for (size_t i = 1; i < a.size(); ++i) CHECK(a[i] >= a[i - 1]);  // ln growth beats band jumps
}

TEST_CASE("nino correlation skill on exact, inverted, and rescaled series") {
  Rng rng(5);
  const int64_t n = 8, k = 12;
  TensorT<double> y({n, k});
  for (int64_t i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform(-2.0, 2.0);
  const NinoResult same = nino_corr_skill(y, y);
  REQUIRE(same.c.size() == 12);
  for (double c : same.c) CHECK(c == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(same.c_m == doctest::Approx(1.0).epsilon(1e-12));
  double wsum = 0;
  for (int kk = 1; kk <= 12; ++kk)
    wsum += (kk <= 4 ? 1.5 : kk <= 11 ? 2.0 : 3.0) * std::log(double(kk));
  CHECK(same.c_wm == doctest::Approx(wsum / 12.0).epsilon(1e-12));
  CHECK(same.zero_variance_leads.empty());

  TensorT<double> neg({n, k});
  for (int64_t i = 0; i < y.size(); ++i) neg.data()[i] = -y.data()[i];
  const NinoResult anti = nino_corr_skill(neg, y);
  for (double c : anti.c) CHECK(c == doctest::Approx(-1.0).epsilon(1e-12));

  TensorT<double> scaled({n, k});
  for (int64_t i = 0; i < y.size(); ++i) scaled.data()[i] = 3.5 * y.data()[i] + 0.25;
  const NinoResult aff = nino_corr_skill(scaled, y);
  for (size_t i = 0; i < aff.c.size(); ++i)
    CHECK(aff.c[i] == doctest::Approx(same.c[i]).epsilon(1e-12));
}

TEST_CASE("nino zero-variance leads are flagged and scored 0") {
  const int64_t n = 4, k = 3;
  TensorT<double> x({n, k}), y({n, k});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j) {
      x.data()[i * k + j] = j == 1 ? 7.0 : double(i + j);  // lead 2 constant
      y.data()[i * k + j] = double(i * 2 + j);
    }
  const NinoResult r = nino_corr_skill(x, y);
  CHECK(r.c[1] == 0.0);
  REQUIRE(r.zero_variance_leads.size() == 1);
  CHECK(r.zero_variance_leads[0] == 2);
  CHECK(r.c[0] == doctest::Approx(1.0).epsilon(1e-12));

  TensorT<double> one({1, 2});
  CHECK_THROWS_WITH_AS((void)nino_corr_skill(one, one), doctest::Contains("2 samples"),
                       std::runtime_error);
  TensorT<double> other({2, 3});
  TensorT<double> wide({2, 4});
  CHECK_THROWS_WITH_AS((void)nino_corr_skill(other, wide), doctest::Contains("[N,K]"),
                       std::runtime_error);
}

TEST_CASE("pooled CSI is invariant under joint pixel permutation") {
  Rng rng(13);
  const Shape s{1, 2, 3, 3, 1};
  const auto pred = rand_bytes(s, rng), target = rand_bytes(s, rng);
  TensorT<float> pp(s), tp(s);
  std::vector<int64_t> perm(size_t(pred.size()));
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = int64_t(i);
  for (size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(int64_t(i))]);
  for (size_t i = 0; i < perm.size(); ++i) {
    pp.data()[i] = pred.data()[perm[i]];
    tp.data()[i] = target.data()[perm[i]];
  }
  const CsiResult a = csi_pooled(pred, target, CsiConfig{});
  const CsiResult b = csi_pooled(pp, tp, CsiConfig{});
  for (size_t j = 0; j < 6; ++j) CHECK(a.per_threshold[j] == b.per_threshold[j]);
}
