#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "cubecast/tensor.hpp"

namespace cubecast {

// Forecast scores over [N, T, H, W, C] tensors with values in [0,1].
//
// Reported MSE/MAE follow the frame-sum convention: the per-frame SUM of
// squared (resp. absolute) error over pixels, averaged over samples and
// frames. Training losses use the plain per-element mean instead.
double mse_report(const TensorT<float>& pred, const TensorT<float>& target);
double mae_report(const TensorT<float>& pred, const TensorT<float>& target);
double mse_elementwise(const TensorT<float>& pred, const TensorT<float>& target);

// Mean structural similarity over all frames: 11x11 Gaussian window
// (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1, valid-window coverage
// (no padding). Requires single-channel frames at least 11x11.
double ssim(const TensorT<float>& pred, const TensorT<float>& target);

// Critical-success-index setup. Values are rescaled to 0-255 before
// thresholding; a pixel exceeds tau when value*255 >= tau - 1e-3 (the slack
// keeps u8-quantized data exactly on integer thresholds).
struct CsiConfig {
  std::vector<double> thresholds{16, 74, 133, 160, 181, 219};
};
void validate_csi(const CsiConfig& cfg);  // strictly increasing, in (0,255]

struct CsiResult {
  std::vector<double> per_threshold;  // CSI-tau, one per configured threshold
  double csi_m = 0;                   // mean over thresholds
};

// Hits / (hits + misses + false alarms) with counts pooled over every pixel
// of every frame; an empty denominator scores 0.
CsiResult csi_pooled(const TensorT<float>& pred, const TensorT<float>& target,
                     const CsiConfig& cfg);

struct CsiStepResult {
  std::vector<std::vector<double>> per_step;  // [threshold][t]
  std::vector<double> per_threshold;          // mean over t per threshold
  double csi_m3 = 0;                          // mean over the first 3 thresholds
  double csi_m6 = 0;                          // mean over all thresholds
};

// Same counts pooled per lead time, then averaged over the horizon.
CsiStepResult csi_per_step(const TensorT<float>& pred, const TensorT<float>& target,
                           const CsiConfig& cfg);

// Lead-time weights a_k = b_k * ln k (1-based k): b = 1.5 for k <= 4,
// 2 for 4 < k <= 11, 3 beyond.
std::vector<double> nino_weights(int64_t horizon = 12);

struct NinoResult {
  std::vector<double> c;     // Pearson correlation per lead, across samples
  double c_m = 0;            // plain mean over leads
  double c_wm = 0;           // (1/K) * sum a_k * c_k
  std::vector<int64_t> zero_variance_leads;  // leads whose c was forced to 0
};

// x, y: [N, K] index series (N >= 2 samples, K leads). A lead with zero
// variance on either side contributes c_k = 0 and is flagged.
NinoResult nino_corr_skill(const TensorT<double>& x, const TensorT<double>& y);

}  // namespace cubecast
