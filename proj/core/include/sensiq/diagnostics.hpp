#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sensiq/calib.hpp"
#include "sensiq/net.hpp"
#include "sensiq/quantize.hpp"
#include "sensiq/sensitivity.hpp"

namespace sensiq {

// Structured outcome of one diagnostic run. Scalars and series are keyed by
// stable names; reruns with an equal configuration reproduce every value
// bit-exactly. seed and config_digest are provenance stamped by the caller
// (experiments that consume randomness fill seed themselves).
struct ExperimentResult {
    std::string experiment;
    std::uint64_t seed = 0;
    std::map<std::string, double> scalars;
    std::map<std::string, std::vector<double>> series;
    std::string config_digest;
};

// Sweeps delta = eps * (RTN quantization delta of the layer) and records the
// first-order predicted loss change against the measured one per eps, plus
// the log-log slope of the gap.
ExperimentResult run_prediction_fidelity(const Network& net, const Batch& batch,
                                         const std::string& layer,
                                         const QuantSpec& spec,
                                         const std::vector<double>& eps_sweep);

// Quantizes linear layers front to back; after each step recomputes every
// downstream layer's exact sensitivity on the perturbed network and reports
// the L1-relative drift from the clean-model values, the cumulative loss
// change, and the gap between the joint loss delta and the sum of
// per-layer deltas. disable_quant zeroes all deltas (conservation check).
ExperimentResult run_cross_layer(const Network& net, const Batch& batch,
                                 const QuantSpec& spec, bool disable_quant = false);

// Computes each channel metric on a calibration batch and a deployment
// batch and reports the per-metric rank correlation, plus the measured
// deployment damage of AWQ protection chosen on calib vs chosen on deploy.
ExperimentResult run_calibration_mismatch(const Network& net, const DistSpec& calib,
                                          const DistSpec& deploy, const TaskSpec& task,
                                          std::size_t n, const std::string& layer,
                                          const QuantSpec& spec,
                                          const std::vector<double>& alpha_grid);

// One paired comparison: variant A protects every layer with sensitivities
// from the clean model, variant B re-runs backward on the partially
// quantized model before each layer. Reports both loss deltas and the
// clean-vs-partial sensitivity rank correlation per layer.
ExperimentResult run_static_vs_adaptive(const Network& net, const Batch& batch,
                                        const QuantSpec& spec,
                                        const std::vector<double>& alpha_grid,
                                        bool disable_quant = false);

// Seeded paired-trial harness over freshly generated nets and batches;
// reports per-trial deltas and win counts, no direction asserted.
ExperimentResult run_static_vs_adaptive_trials(
    const std::vector<std::string>& arch, LossKind loss, const DistSpec& dist_template,
    double noise_scale, std::size_t n, const QuantSpec& spec,
    const std::vector<double>& alpha_grid, std::size_t trials, std::uint64_t seed);

// Measures the true loss damage of quantizing each input channel alone
// (RTN column delta, optionally scaled) and rank-correlates every channel
// metric against the |damage| vector; the first-order per-channel
// prediction is correlated against the signed damage.
ExperimentResult run_proxy_ranking(const Network& net, const Batch& batch,
                                   const std::string& layer, const QuantSpec& spec,
                                   double delta_scale = 1.0);

// Least-squares slope of log|y| vs log x over entries with x > 0 and
// |y| > 0; 0 when fewer than two usable points.
double log_log_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace sensiq
