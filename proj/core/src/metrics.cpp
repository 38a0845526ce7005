#include "cubecast/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace cubecast {
namespace {

void require_pair(const TensorT<float>& pred, const TensorT<float>& target) {
  if (pred.shape() != target.shape())
    throw std::runtime_error("metric shape mismatch " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
  if (pred.shape().size() != 5)
    throw std::runtime_error("metrics expect [N,T,H,W,C] tensors, got " +
                             shape_str(pred.shape()));
}

double frame_reduced(const TensorT<float>& pred, const TensorT<float>& target, bool squared) {
  require_pair(pred, target);
  const auto& s = pred.shape();
  const int64_t frames = s[0] * s[1], pixels = s[2] * s[3] * s[4];
  const float* p = pred.data();
  const float* t = target.data();
  double total = 0;
  for (int64_t f = 0; f < frames; ++f) {
    double frame_sum = 0;
    for (int64_t i = 0; i < pixels; ++i) {
      const double e = double(p[f * pixels + i]) - double(t[f * pixels + i]);
      frame_sum += squared ? e * e : std::abs(e);
    }
    total += frame_sum;
  }
  return total / double(frames);
}

constexpr int64_t kWin = 11;
constexpr double kSigma = 1.5, kC1 = 1e-4, kC2 = 9e-4;

const std::vector<double>& gauss_kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> w(kWin);
    double sum = 0;
    for (int64_t i = 0; i < kWin; ++i) {
      const double d = double(i) - (kWin - 1) / 2.0;
      w[i] = std::exp(-d * d / (2 * kSigma * kSigma));
      sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
  }();
  return k;
}

// Valid-mode separable Gaussian blur of an h x w field: rows then columns.
void blur_valid(const std::vector<double>& in, int64_t h, int64_t w, std::vector<double>& tmp,
                std::vector<double>& out) {
  const auto& k = gauss_kernel();
  const int64_t wv = w - kWin + 1, hv = h - kWin + 1;
  tmp.assign(size_t(h * wv), 0.0);
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < wv; ++c) {
      double acc = 0;
      for (int64_t i = 0; i < kWin; ++i) acc += k[i] * in[r * w + c + i];
      tmp[r * wv + c] = acc;
    }
  out.assign(size_t(hv * wv), 0.0);
  for (int64_t r = 0; r < hv; ++r)
    for (int64_t c = 0; c < wv; ++c) {
      double acc = 0;
      for (int64_t i = 0; i < kWin; ++i) acc += k[i] * tmp[(r + i) * wv + c];
      out[r * wv + c] = acc;
    }
}

bool exceeds(double v, double tau) { return v * 255.0 >= tau - 1e-3; }

struct Counts {
  int64_t hits = 0, misses = 0, fa = 0;
  double csi() const {
    const int64_t den = hits + misses + fa;
    return den == 0 ? 0.0 : double(hits) / double(den);
  }
};

}  // namespace

double mse_report(const TensorT<float>& pred, const TensorT<float>& target) {
  return frame_reduced(pred, target, true);
}

double mae_report(const TensorT<float>& pred, const TensorT<float>& target) {
  return frame_reduced(pred, target, false);
}

double mse_elementwise(const TensorT<float>& pred, const TensorT<float>& target) {
  require_pair(pred, target);
  const float* p = pred.data();
  const float* t = target.data();
  double total = 0;
  for (int64_t i = 0; i < pred.size(); ++i) {
    const double e = double(p[i]) - double(t[i]);
    total += e * e;
  }
  return total / double(pred.size());
}

double ssim(const TensorT<float>& pred, const TensorT<float>& target) {
  require_pair(pred, target);
  const auto& s = pred.shape();
  if (s[4] != 1) throw std::runtime_error("ssim expects single-channel frames");
  const int64_t h = s[2], w = s[3];
  if (h < kWin || w < kWin)
    throw std::runtime_error("ssim frames smaller than the 11x11 window: " + shape_str(s));
  const int64_t frames = s[0] * s[1], pixels = h * w;
  std::vector<double> x(pixels), y(pixels), xx(pixels), yy(pixels), xy(pixels);
  std::vector<double> tmp, mx, my, mxx, myy, mxy;
  double total = 0;
  for (int64_t f = 0; f < frames; ++f) {
    const float* p = pred.data() + f * pixels;
    const float* t = target.data() + f * pixels;
    for (int64_t i = 0; i < pixels; ++i) {
      x[i] = p[i];
      y[i] = t[i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    blur_valid(x, h, w, tmp, mx);
    blur_valid(y, h, w, tmp, my);
    blur_valid(xx, h, w, tmp, mxx);
    blur_valid(yy, h, w, tmp, myy);
    blur_valid(xy, h, w, tmp, mxy);
    double frame_sum = 0;
    for (size_t i = 0; i < mx.size(); ++i) {
      const double vx = mxx[i] - mx[i] * mx[i];
      const double vy = myy[i] - my[i] * my[i];
      const double cxy = mxy[i] - mx[i] * my[i];
      frame_sum += ((2 * mx[i] * my[i] + kC1) * (2 * cxy + kC2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    total += frame_sum / double(mx.size());
  }
  return total / double(frames);
}

void validate_csi(const CsiConfig& cfg) {
  if (cfg.thresholds.empty()) throw std::runtime_error("csi needs at least one threshold");
  double prev = 0;
  for (double tau : cfg.thresholds) {
    if (tau <= prev || tau > 255)
      throw std::runtime_error("csi thresholds must be strictly increasing within (0,255]");
    prev = tau;
  }
}

CsiResult csi_pooled(const TensorT<float>& pred, const TensorT<float>& target,
                     const CsiConfig& cfg) {
  require_pair(pred, target);
  validate_csi(cfg);
  const size_t nt = cfg.thresholds.size();
  std::vector<Counts> counts(nt);
  const float* p = pred.data();
  const float* t = target.data();
  for (int64_t i = 0; i < pred.size(); ++i)
    for (size_t j = 0; j < nt; ++j) {
      const bool pe = exceeds(p[i], cfg.thresholds[j]);
      const bool te = exceeds(t[i], cfg.thresholds[j]);
      counts[j].hits += pe && te;
      counts[j].misses += !pe && te;
      counts[j].fa += pe && !te;
    }
  CsiResult r;
  for (const Counts& c : counts) r.per_threshold.push_back(c.csi());
  double sum = 0;
  for (double v : r.per_threshold) sum += v;
  r.csi_m = sum / double(nt);
  return r;
}

CsiStepResult csi_per_step(const TensorT<float>& pred, const TensorT<float>& target,
                           const CsiConfig& cfg) {
  require_pair(pred, target);
  validate_csi(cfg);
  const auto& s = pred.shape();
  const int64_t steps = s[1], per = s[2] * s[3] * s[4];
  const size_t nt = cfg.thresholds.size();
  CsiStepResult r;
  r.per_step.assign(nt, std::vector<double>(size_t(steps), 0.0));
  for (int64_t t = 0; t < steps; ++t) {
    std::vector<Counts> counts(nt);
    for (int64_t n = 0; n < s[0]; ++n) {
      const float* pp = pred.data() + (n * steps + t) * per;
      const float* tp = target.data() + (n * steps + t) * per;
      for (int64_t i = 0; i < per; ++i)
        for (size_t j = 0; j < nt; ++j) {
          const bool pe = exceeds(pp[i], cfg.thresholds[j]);
          const bool te = exceeds(tp[i], cfg.thresholds[j]);
          counts[j].hits += pe && te;
          counts[j].misses += !pe && te;
          counts[j].fa += pe && !te;
        }
    }
    for (size_t j = 0; j < nt; ++j) r.per_step[j][size_t(t)] = counts[j].csi();
  }
  for (size_t j = 0; j < nt; ++j) {
    double sum = 0;
    for (double v : r.per_step[j]) sum += v;
    r.per_threshold.push_back(sum / double(steps));
  }
  const size_t m3 = std::min<size_t>(3, nt);
  double s3 = 0, s6 = 0;
  for (size_t j = 0; j < m3; ++j) s3 += r.per_threshold[j];
  for (double v : r.per_threshold) s6 += v;
  r.csi_m3 = s3 / double(m3);
  r.csi_m6 = s6 / double(nt);
  return r;
}

std::vector<double> nino_weights(int64_t horizon) {
  std::vector<double> a;
  for (int64_t k = 1; k <= horizon; ++k) {
    const double b = k <= 4 ? 1.5 : (k <= 11 ? 2.0 : 3.0);
    a.push_back(b * std::log(double(k)));
  }
  return a;
}

NinoResult nino_corr_skill(const TensorT<double>& x, const TensorT<double>& y) {
  if (x.shape() != y.shape() || x.shape().size() != 2)
    throw std::runtime_error("nino series must share an [N,K] shape");
  const int64_t n = x.shape()[0], k = x.shape()[1];
  if (n < 2) throw std::runtime_error("nino correlation needs at least 2 samples");
  NinoResult r;
  const auto weights = nino_weights(k);
  double wsum = 0, msum = 0;
  for (int64_t lead = 0; lead < k; ++lead) {
    double sx = 0, sy = 0;
    for (int64_t i = 0; i < n; ++i) {
      sx += x.data()[i * k + lead];
      sy += y.data()[i * k + lead];
    }
    const double mxv = sx / n, myv = sy / n;
    double vxx = 0, vyy = 0, vxy = 0;
    for (int64_t i = 0; i < n; ++i) {
      const double dx = x.data()[i * k + lead] - mxv;
      const double dy = y.data()[i * k + lead] - myv;
      vxx += dx * dx;
      vyy += dy * dy;
      vxy += dx * dy;
    }
    double c = 0;
    if (vxx > 0 && vyy > 0)
      c = vxy / std::sqrt(vxx * vyy);
    else
      r.zero_variance_leads.push_back(lead + 1);
    r.c.push_back(c);
    msum += c;
    wsum += weights[size_t(lead)] * c;
  }
  r.c_m = msum / double(k);
  r.c_wm = wsum / double(k);
  return r;
}

}  // namespace cubecast
