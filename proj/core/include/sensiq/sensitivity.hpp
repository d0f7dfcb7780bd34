#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sensiq/matrix.hpp"
#include "sensiq/net.hpp"

namespace sensiq {

enum class MetricKind {
    exact_sensitivity,
    quadratic_diag_d,
    magnitude,
    covariance,
    fisher_diag,
    grad_saliency,
    obd_weight,
};

enum class Granularity { channel, weight };

// Per-channel or per-weight importance scores from one metric, with the
// provenance needed to compare reports across runs.
struct SensitivityReport {
    std::string layer_name;
    MetricKind metric = MetricKind::magnitude;
    Granularity granularity = Granularity::channel;
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    std::vector<double> scores;  // d_in entries, or d_out*d_in row-major
    std::size_t n_samples = 0;
    std::map<std::string, std::string> meta;
};

// Channel scores via the full gradient Gram matrix: the j-th score is
// (1/n) * ||g^T x_{:,j}||^2, i.e. diag(X^T (G G^T) X)/n. Cross-sample
// gradient correlations are kept.
SensitivityReport exact_sensitivity(const LayerTap& tap);

// Channel scores keeping only the diagonal of the gradient Gram:
// (1/n) * sum_i ||g_i||^2 x_ij^2 = diag(X^T D X)/n.
SensitivityReport quadratic_diag_d(const LayerTap& tap);

// Mean squared activation per channel: (1/n) * ||x_{:,j}||^2.
SensitivityReport magnitude(const LayerTap& tap);

// diag(X^T X)/n. Numerically identical to magnitude; kept as its own metric
// because the two sit in different places in the approximation taxonomy.
SensitivityReport covariance(const LayerTap& tap);

// Per-weight empirical diagonal Fisher: (1/n) * sum_i (g_ik x_ij)^2.
SensitivityReport fisher_diag(const LayerTap& tap);

// Per-weight |d(mean loss)/dW| = |g^T x| entrywise. The tap gradient already
// carries the 1/n of the mean-loss convention.
SensitivityReport grad_saliency(const LayerTap& tap);

// Per-weight OBD deletion saliency 0.5 * w^2 * diag(H) under the layer
// surrogate H = X^T X / n.
SensitivityReport obd_weight(const LayerTap& tap, const Matrix& weight);

// Sums a weight-granularity report over output rows, yielding per-channel
// scores. grad_saliency reduces by column 2-norm instead of a plain sum.
std::vector<double> channel_reduction(const SensitivityReport& report);

// First-order predicted loss change <d(mean loss)/dW, delta> = <g^T x, delta>.
double predict_loss_delta(const LayerTap& tap, const Matrix& delta);

// Spearman rank correlation with average ranks for ties. Identical vectors
// give 1; otherwise a zero-variance side gives 0 by convention.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// spearman over two reports; requires equal granularity and length >= 2.
double rank_correlation(const SensitivityReport& a, const SensitivityReport& b);

// Layer Hessian surrogate X^T X / n.
Matrix hessian_surrogate(const Matrix& x);

// Gradient-weighted surrogate X^T D X / n with D = diag(||g_i||^2).
Matrix weighted_hessian_surrogate(const Matrix& x, const Matrix& g);

const char* metric_name(MetricKind kind);
MetricKind metric_from_name(std::string_view name);
Granularity metric_granularity(MetricKind kind);

}  // namespace sensiq
