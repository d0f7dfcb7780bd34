#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sensiq/matrix.hpp"
#include "sensiq/net.hpp"
#include "sensiq/sensitivity.hpp"

namespace sensiq {

enum class QuantGranularity { per_tensor, per_channel_in };

enum class ScalePolicy { absmax, grid_search_mse };

enum class ObsOrder { natural, desc_diag };

// Grid description for one quantization pass. Only symmetric grids are
// supported: levels {-2^(b-1), ..., 2^(b-1)-1} with absmax mapped to the
// positive end. group_size groups contiguous input channels under one scale
// and must divide d_in.
struct QuantSpec {
    int bits = 4;
    bool symmetric = true;
    QuantGranularity granularity = QuantGranularity::per_channel_in;
    ScalePolicy scale_policy = ScalePolicy::absmax;
    std::size_t group_size = 0;  // 0 = no grouping

    bool operator==(const QuantSpec&) const = default;
};

void validate_spec(const QuantSpec& spec, std::size_t d_in);

std::size_t scale_group_count(const QuantSpec& spec, std::size_t d_in);
std::size_t scale_group_of(const QuantSpec& spec, std::size_t channel);

// Result of quantizing one weight matrix. q_weight holds integer grid
// levels (stored as doubles); dequantized() rebuilds scale * level, divided
// by the protective awq scale when present, so original = dequantized() -
// delta.
struct QuantizedLayer {
    Matrix q_weight;
    std::vector<double> scales;           // one per scale group
    std::vector<double> awq_scales;       // per input channel; empty unless AWQ
    Matrix delta;                         // dequantized - original
    QuantSpec spec;
    std::optional<double> alpha;          // chosen AWQ exponent
    std::vector<std::size_t> zero_scale_groups;  // groups forced to scale 1

    Matrix dequantized() const;
};

// The scalar grid rule: round(value/scale) half away from zero, clamped to
// [-2^(bits-1), 2^(bits-1)-1]. Returns the integer level as a double.
double grid_level(double value, double scale, int bits);

// Round-to-nearest on the symmetric grid, half away from zero, clamped.
QuantizedLayer quantize_rtn(const Matrix& w, const QuantSpec& spec);

// Protective per-channel scaling: columns are multiplied by
// s_j = (score_j / max score)^alpha before RTN and divided back at
// dequantization, with alpha picked from alpha_grid by the smallest
// H-weighted error tr(delta H delta^T), H = X^T X / n.
QuantizedLayer quantize_awq(const Matrix& w, const LayerTap& tap,
                            const SensitivityReport& report, const QuantSpec& spec,
                            const std::vector<double>& alpha_grid);

// Greedy error-compensating quantization: channels are fixed to the grid one
// at a time (largest diag(h) first by default) and the still-free channels
// absorb each error through the inverse-Hessian update. h is the d_in x d_in
// quadratic surrogate, factored with jitter 1e-8 * mean(diag h).
QuantizedLayer quantize_obs(const Matrix& w, const Matrix& h, const QuantSpec& spec,
                            ObsOrder order = ObsOrder::desc_diag);

// quantize_obs against the gradient-weighted surrogate X^T D X / n. Rejects
// with NumericalError when the curvature is degenerate (all-zero gradients).
QuantizedLayer quantize_obs_weighted(const Matrix& w, const LayerTap& tap,
                                     const QuantSpec& spec,
                                     ObsOrder order = ObsOrder::desc_diag);

// tr(delta * h * delta^T): the layer-local quadratic objective.
double quadratic_error(const Matrix& delta, const Matrix& h);

struct BitAllocation {
    std::map<std::string, int> per_layer_bits;
    double budget = 0.0;
    double predicted_cost = 0.0;
};

// Greedy mixed-precision allocation: everything starts at the widest
// candidate and the layer with the smallest predicted cost increase is
// demoted until the average bit-width fits the budget. Cost per layer is
// sum_j score_j * E[grid error^2 at those bits], estimated from the layer's
// own weights. Ties demote the lexicographically first layer.
BitAllocation allocate_bits(const Network& net,
                            const std::map<std::string, SensitivityReport>& reports,
                            const std::vector<int>& candidate_bits, double budget,
                            const QuantSpec& base_spec);

const char* granularity_name(QuantGranularity g);
QuantGranularity granularity_from_name(std::string_view name);
const char* scale_policy_name(ScalePolicy p);
ScalePolicy scale_policy_from_name(std::string_view name);
const char* obs_order_name(ObsOrder o);
ObsOrder obs_order_from_name(std::string_view name);

}  // namespace sensiq
