#include "sensiq/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sensiq/errors.hpp"
#include "sensiq/numfmt.hpp"

namespace sensiq {

namespace {

double grid_max(int bits) {
    return static_cast<double>((1 << (bits - 1)) - 1);
}

double grid_min(int bits) {
    return -static_cast<double>(1 << (bits - 1));
}

double to_level(double value, double scale, int bits) {
    const double q = std::round(value / scale);
    return std::min(grid_max(bits), std::max(grid_min(bits), q));
}

// Per-group scales from the weight values under the spec's policy. All-zero
// groups get scale 1 and are listed in zero_groups.
std::vector<double> compute_scales(const Matrix& w, const QuantSpec& spec,
                                   std::vector<std::size_t>& zero_groups) {
    const std::size_t groups = scale_group_count(spec, w.cols());
    std::vector<double> absmax(groups, 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            const std::size_t g = scale_group_of(spec, j);
            absmax[g] = std::max(absmax[g], std::fabs(w.at(i, j)));
        }
    }
    std::vector<double> scales(groups, 1.0);
    for (std::size_t g = 0; g < groups; ++g) {
        if (absmax[g] == 0.0) {
            zero_groups.push_back(g);
            continue;
        }
        scales[g] = absmax[g] / grid_max(spec.bits);
    }
    if (spec.scale_policy == ScalePolicy::grid_search_mse) {
        // Shrink each group scale over a fixed multiplier grid, keeping the
        // candidate with the smallest squared reconstruction error.
        for (std::size_t g = 0; g < groups; ++g) {
            if (absmax[g] == 0.0) {
                continue;
            }
            double best_scale = scales[g];
            double best_err = -1.0;
            for (int step = 0; step <= 30; ++step) {
                const double mult = 0.40 + 0.02 * static_cast<double>(step);
                const double cand = scales[g] * mult;
                double err = 0.0;
                for (std::size_t i = 0; i < w.rows(); ++i) {
                    for (std::size_t j = 0; j < w.cols(); ++j) {
                        if (scale_group_of(spec, j) != g) {
                            continue;
                        }
                        const double d =
                            w.at(i, j) - cand * to_level(w.at(i, j), cand, spec.bits);
                        err += d * d;
                    }
                }
                if (best_err < 0.0 || err < best_err) {
                    best_err = err;
                    best_scale = cand;
                }
            }
            scales[g] = best_scale;
        }
    }
    return scales;
}

QuantizedLayer rtn_with_scales(const Matrix& w, const QuantSpec& spec,
                               std::vector<double> scales,
                               std::vector<std::size_t> zero_groups) {
    QuantizedLayer out;
    out.spec = spec;
    out.scales = std::move(scales);
    out.zero_scale_groups = std::move(zero_groups);
    out.q_weight = Matrix(w.rows(), w.cols());
    out.delta = Matrix(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            const double scale = out.scales[scale_group_of(spec, j)];
            const double level = to_level(w.at(i, j), scale, spec.bits);
            out.q_weight.at(i, j) = level;
            out.delta.at(i, j) = level * scale - w.at(i, j);
        }
    }
    return out;
}

void check_tap_matches(const Matrix& w, const LayerTap& tap) {
    if (tap.x.cols() != w.cols()) {
        throw ShapeError("tap activations have d_in " + std::to_string(tap.x.cols()) +
                         ", weight has " + std::to_string(w.cols()));
    }
}

// Inverse of h (jittered per cholesky_lower escalation) via forward/back
// substitution against identity columns.
Matrix spd_inverse(const Matrix& h, double jitter) {
    const Matrix l = cholesky_lower(h, jitter);
    const std::size_t n = h.rows();
    Matrix inv(n, n);
    std::vector<double> y(n);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = i == c ? 1.0 : 0.0;
            for (std::size_t k = 0; k < i; ++k) {
                s -= l.at(i, k) * y[k];
            }
            y[i] = s / l.at(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y[ii];
            for (std::size_t k = ii + 1; k < n; ++k) {
                s -= l.at(k, ii) * inv.at(k, c);
            }
            inv.at(ii, c) = s / l.at(ii, ii);
        }
    }
    return inv;
}

// Shared OBS core once the surrogate h is fixed.
QuantizedLayer obs_against(const Matrix& w, const Matrix& h, const QuantSpec& spec,
                           ObsOrder order) {
    validate_spec(spec, w.cols());
    const std::size_t d = w.cols();
    if (h.rows() != d || h.cols() != d) {
        throw ShapeError("obs: surrogate is " + std::to_string(h.rows()) + "x" +
                         std::to_string(h.cols()) + ", expected " + std::to_string(d) +
                         "x" + std::to_string(d));
    }

    double diag_mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        diag_mean += h.at(j, j);
    }
    diag_mean /= static_cast<double>(d);
    const double jitter = 1e-8 * diag_mean;

    const Matrix m_inv = spd_inverse(h, jitter);

    std::vector<std::size_t> sequence(d);
    std::iota(sequence.begin(), sequence.end(), std::size_t{0});
    if (order == ObsOrder::desc_diag) {
        std::stable_sort(sequence.begin(), sequence.end(),
                         [&](std::size_t a, std::size_t b) {
                             return h.at(a, a) > h.at(b, b);
                         });
    }

    std::vector<std::size_t> zero_groups;
    const std::vector<double> scales = compute_scales(w, spec, zero_groups);

    Matrix wcur = w;
    Matrix levels(w.rows(), w.cols());
    Matrix m = m_inv;
    std::vector<bool> remaining(d, true);

    for (std::size_t t = 0; t < d; ++t) {
        const std::size_t q = sequence[t];
        remaining[q] = false;
        const double pivot = m.at(q, q);
        if (!(pivot > 0.0) || !std::isfinite(pivot)) {
            throw NumericalError("obs: non-positive inverse pivot at channel " +
                                 std::to_string(q));
        }
        const double scale = scales[scale_group_of(spec, q)];
        for (std::size_t r = 0; r < w.rows(); ++r) {
            const double level = to_level(wcur.at(r, q), scale, spec.bits);
            levels.at(r, q) = level;
            const double err = wcur.at(r, q) - level * scale;
            if (err != 0.0) {
                for (std::size_t f = 0; f < d; ++f) {
                    if (remaining[f]) {
                        wcur.at(r, f) -= err * m.at(f, q) / pivot;
                    }
                }
            }
        }
        // Schur downdate: the inverse over the still-free channels.
        for (std::size_t a = 0; a < d; ++a) {
            if (!remaining[a]) {
                continue;
            }
            for (std::size_t b = 0; b < d; ++b) {
                if (!remaining[b]) {
                    continue;
                }
                m.at(a, b) -= m.at(a, q) * m.at(q, b) / pivot;
            }
        }
    }

    QuantizedLayer out;
    out.spec = spec;
    out.scales = scales;
    out.zero_scale_groups = std::move(zero_groups);
    out.q_weight = std::move(levels);
    out.delta = Matrix(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            const double scale = scales[scale_group_of(spec, j)];
            out.delta.at(i, j) = out.q_weight.at(i, j) * scale - w.at(i, j);
        }
    }
    return out;
}

}  // namespace

void validate_spec(const QuantSpec& spec, std::size_t d_in) {
    if (spec.bits < 2 || spec.bits > 8) {
        throw ValidationError("bits must be in [2, 8], got " +
                              std::to_string(spec.bits));
    }
    if (!spec.symmetric) {
        throw ValidationError("only symmetric grids are supported");
    }
    if (spec.group_size != 0) {
        if (spec.granularity != QuantGranularity::per_channel_in) {
            throw ValidationError("group_size requires per-channel-in granularity");
        }
        if (d_in % spec.group_size != 0) {
            throw ValidationError("group_size " + std::to_string(spec.group_size) +
                                  " does not divide d_in " + std::to_string(d_in));
        }
    }
}

std::size_t scale_group_count(const QuantSpec& spec, std::size_t d_in) {
    if (spec.granularity == QuantGranularity::per_tensor) {
        return 1;
    }
    return spec.group_size ? d_in / spec.group_size : d_in;
}

std::size_t scale_group_of(const QuantSpec& spec, std::size_t channel) {
    if (spec.granularity == QuantGranularity::per_tensor) {
        return 0;
    }
    return spec.group_size ? channel / spec.group_size : channel;
}

double grid_level(double value, double scale, int bits) {
    return to_level(value, scale, bits);
}

Matrix QuantizedLayer::dequantized() const {
    Matrix out(q_weight.rows(), q_weight.cols());
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) {
            double v = q_weight.at(i, j) * scales[scale_group_of(spec, j)];
            if (!awq_scales.empty()) {
                v /= awq_scales[j];
            }
            out.at(i, j) = v;
        }
    }
    return out;
}

QuantizedLayer quantize_rtn(const Matrix& w, const QuantSpec& spec) {
    validate_spec(spec, w.cols());
    std::vector<std::size_t> zero_groups;
    std::vector<double> scales = compute_scales(w, spec, zero_groups);
    return rtn_with_scales(w, spec, std::move(scales), std::move(zero_groups));
}

QuantizedLayer quantize_awq(const Matrix& w, const LayerTap& tap,
                            const SensitivityReport& report, const QuantSpec& spec,
                            const std::vector<double>& alpha_grid) {
    validate_spec(spec, w.cols());
    check_tap_matches(w, tap);
    if (alpha_grid.empty()) {
        throw ValidationError("alpha_grid must not be empty");
    }
    for (double a : alpha_grid) {
        if (!(a >= 0.0 && a <= 1.0)) {
            throw ValidationError("alpha values must lie in [0, 1], got " +
                                  format_double(a));
        }
    }
    if (report.granularity != Granularity::channel) {
        throw ValidationError("awq needs a per-input-channel report");
    }
    if (report.scores.size() != w.cols()) {
        throw ShapeError("report has " + std::to_string(report.scores.size()) +
                         " channels, weight has " + std::to_string(w.cols()));
    }

    const Matrix h = hessian_surrogate(tap.x);
    const double max_score =
        *std::max_element(report.scores.begin(), report.scores.end());

    constexpr double kScaleFloor = 1e-6;
    QuantizedLayer best;
    double best_err = -1.0;
    for (double a : alpha_grid) {
        std::vector<double> s(w.cols(), 1.0);
        for (std::size_t j = 0; j < w.cols(); ++j) {
            const double rel = max_score > 0.0 ? report.scores[j] / max_score : 0.0;
            s[j] = std::max(std::pow(rel, a), kScaleFloor);
        }
        Matrix scaled = w;
        for (std::size_t i = 0; i < w.rows(); ++i) {
            for (std::size_t j = 0; j < w.cols(); ++j) {
                scaled.at(i, j) *= s[j];
            }
        }
        QuantizedLayer cand = quantize_rtn(scaled, spec);
        cand.awq_scales = std::move(s);
        cand.alpha = a;
        cand.delta = cand.dequantized();
        for (std::size_t i = 0; i < w.size(); ++i) {
            cand.delta.data()[i] -= w.data()[i];
        }
        const double err = quadratic_error(cand.delta, h);
        if (best_err < 0.0 || err < best_err) {
            best_err = err;
            best = std::move(cand);
        }
    }
    return best;
}

QuantizedLayer quantize_obs(const Matrix& w, const Matrix& h, const QuantSpec& spec,
                            ObsOrder order) {
    return obs_against(w, h, spec, order);
}

QuantizedLayer quantize_obs_weighted(const Matrix& w, const LayerTap& tap,
                                     const QuantSpec& spec, ObsOrder order) {
    check_tap_matches(w, tap);
    if (!tap.has_g()) {
        throw StateError("tap for '" + tap.layer_name +
                         "' has no gradient; run a backward pass");
    }
    const std::vector<double> d = row_norms_sq(tap.g);
    double total = 0.0;
    for (double v : d) {
        total += v;
    }
    if (total == 0.0) {
        throw NumericalError(
            "degenerate curvature: all gradient row norms are zero");
    }
    return obs_against(w, weighted_hessian_surrogate(tap.x, tap.g), spec, order);
}

double quadratic_error(const Matrix& delta, const Matrix& h) {
    if (h.rows() != delta.cols() || h.cols() != delta.cols()) {
        throw ShapeError("quadratic_error: surrogate dims do not match delta");
    }
    double acc = 0.0;
    for (std::size_t r = 0; r < delta.rows(); ++r) {
        for (std::size_t a = 0; a < delta.cols(); ++a) {
            double inner = 0.0;
            for (std::size_t b = 0; b < delta.cols(); ++b) {
                inner += h.at(a, b) * delta.at(r, b);
            }
            acc += delta.at(r, a) * inner;
        }
    }
    return acc;
}

BitAllocation allocate_bits(const Network& net,
                            const std::map<std::string, SensitivityReport>& reports,
                            const std::vector<int>& candidate_bits, double budget,
                            const QuantSpec& base_spec) {
    if (candidate_bits.empty()) {
        throw ValidationError("candidate_bits must not be empty");
    }
    if (!std::is_sorted(candidate_bits.begin(), candidate_bits.end()) ||
        std::adjacent_find(candidate_bits.begin(), candidate_bits.end()) !=
            candidate_bits.end()) {
        throw ValidationError("candidate_bits must be strictly ascending");
    }
    const double min_bits = candidate_bits.front();
    const double max_bits = candidate_bits.back();
    if (budget < min_bits - 1e-12 || budget > max_bits + 1e-12) {
        throw ValidationError("budget " + format_double(budget) +
                              " outside candidate range [" + format_double(min_bits) +
                              ", " + format_double(max_bits) + "]");
    }

    const std::vector<std::string> layers = linear_layer_names(net);
    if (layers.empty()) {
        throw ValidationError("network has no linear layers to allocate");
    }

    // cost[layer][candidate index]
    std::map<std::string, std::vector<double>> cost;
    for (const std::string& name : layers) {
        const auto it = reports.find(name);
        if (it == reports.end()) {
            throw LookupError("no sensitivity report for layer '" + name + "'");
        }
        const std::vector<double> scores = channel_reduction(it->second);
        const Matrix& w = net.layer(name).weight;
        if (scores.size() != w.cols()) {
            throw ShapeError("report for '" + name + "' has " +
                             std::to_string(scores.size()) + " channels, weight has " +
                             std::to_string(w.cols()));
        }
        std::vector<double> per_candidate;
        for (int bits : candidate_bits) {
            QuantSpec spec = base_spec;
            spec.bits = bits;
            const QuantizedLayer q = quantize_rtn(w, spec);
            double layer_cost = 0.0;
            for (std::size_t j = 0; j < w.cols(); ++j) {
                double err2 = 0.0;
                for (std::size_t k = 0; k < w.rows(); ++k) {
                    err2 += q.delta.at(k, j) * q.delta.at(k, j);
                }
                layer_cost += scores[j] * err2 / static_cast<double>(w.rows());
            }
            per_candidate.push_back(layer_cost);
        }
        cost[name] = std::move(per_candidate);
    }

    std::map<std::string, std::size_t> level;  // index into candidate_bits
    for (const std::string& name : layers) {
        level[name] = candidate_bits.size() - 1;
    }
    auto average = [&] {
        double acc = 0.0;
        for (const std::string& name : layers) {
            acc += candidate_bits[level[name]];
        }
        return acc / static_cast<double>(layers.size());
    };

    while (average() > budget + 1e-12) {
        std::string pick;
        double pick_increase = 0.0;
        for (const std::string& name : layers) {
            if (level[name] == 0) {
                continue;
            }
            const double inc = cost[name][level[name] - 1] - cost[name][level[name]];
            if (pick.empty() || inc < pick_increase) {
                pick = name;
                pick_increase = inc;
            }
        }
        if (pick.empty()) {
            throw ValidationError("budget " + format_double(budget) +
                                  " infeasible: all layers at minimum bits");
        }
        --level[pick];
    }

    BitAllocation out;
    out.budget = budget;
    for (const std::string& name : layers) {
        out.per_layer_bits[name] = candidate_bits[level[name]];
        out.predicted_cost += cost[name][level[name]];
    }
    return out;
}

const char* granularity_name(QuantGranularity g) {
    return g == QuantGranularity::per_tensor ? "per-tensor" : "per-channel-in";
}

QuantGranularity granularity_from_name(std::string_view name) {
    if (name == "per-tensor") return QuantGranularity::per_tensor;
    if (name == "per-channel-in") return QuantGranularity::per_channel_in;
    throw ValidationError("unknown granularity '" + std::string(name) + "'");
}

const char* scale_policy_name(ScalePolicy p) {
    return p == ScalePolicy::absmax ? "absmax" : "grid-search-mse";
}

ScalePolicy scale_policy_from_name(std::string_view name) {
    if (name == "absmax") return ScalePolicy::absmax;
    if (name == "grid-search-mse") return ScalePolicy::grid_search_mse;
    throw ValidationError("unknown scale policy '" + std::string(name) + "'");
}

const char* obs_order_name(ObsOrder o) {
    return o == ObsOrder::natural ? "natural" : "desc-diag";
}

ObsOrder obs_order_from_name(std::string_view name) {
    if (name == "natural") return ObsOrder::natural;
    if (name == "desc-diag") return ObsOrder::desc_diag;
    throw ValidationError("unknown obs order '" + std::string(name) + "'");
}

}  // namespace sensiq
