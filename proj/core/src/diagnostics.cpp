#include "sensiq/diagnostics.hpp"

#include <cmath>

#include "sensiq/errors.hpp"
#include "sensiq/rng.hpp"

namespace sensiq {

namespace {

Matrix scale_matrix(const Matrix& m, double factor) {
    Matrix out = m;
    for (double& v : out.data()) {
        v *= factor;
    }
    return out;
}

Matrix column_slice(const Matrix& m, std::size_t j) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        out.at(i, j) = m.at(i, j);
    }
    return out;
}

double l1_norm(const std::vector<double>& a) {
    double acc = 0.0;
    for (double v : a) {
        acc += std::fabs(v);
    }
    return acc;
}

double l1_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += std::fabs(a[i] - b[i]);
    }
    return acc;
}

// L1-relative drift; falls back to the absolute L1 difference when the
// reference has zero mass.
double drift_l1(const std::vector<double>& before, const std::vector<double>& after) {
    const double denom = l1_norm(before);
    const double numer = l1_diff(before, after);
    return denom > 0.0 ? numer / denom : numer;
}

// The channel metrics compared across batches and against measured damage.
const MetricKind kChannelMetrics[] = {
    MetricKind::exact_sensitivity, MetricKind::quadratic_diag_d,
    MetricKind::magnitude, MetricKind::covariance, MetricKind::fisher_diag};

std::vector<double> channel_scores(MetricKind kind, const LayerTap& tap) {
    switch (kind) {
        case MetricKind::exact_sensitivity: return exact_sensitivity(tap).scores;
        case MetricKind::quadratic_diag_d: return quadratic_diag_d(tap).scores;
        case MetricKind::magnitude: return magnitude(tap).scores;
        case MetricKind::covariance: return covariance(tap).scores;
        case MetricKind::fisher_diag: return channel_reduction(fisher_diag(tap));
        default:
            throw ValidationError("not a channel metric");
    }
}

}  // namespace

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
        if (x[i] > 0.0 && std::fabs(y[i]) > 0.0) {
            lx.push_back(std::log(x[i]));
            ly.push_back(std::log(std::fabs(y[i])));
        }
    }
    if (lx.size() < 2) {
        return 0.0;
    }
    const double n = static_cast<double>(lx.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sx += lx[i];
        sy += ly[i];
        sxx += lx[i] * lx[i];
        sxy += lx[i] * ly[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

ExperimentResult run_prediction_fidelity(const Network& net, const Batch& batch,
                                         const std::string& layer,
                                         const QuantSpec& spec,
                                         const std::vector<double>& eps_sweep) {
    ExperimentResult result;
    result.experiment = "prediction-fidelity";

    const ForwardResult base = backward(net, batch, {layer});
    const LayerTap& tap = base.tap(layer);
    const Matrix direction = quantize_rtn(net.layer(layer).weight, spec).delta;

    std::vector<double> eps_col, predicted_col, measured_col, gap_col;
    for (double eps : eps_sweep) {
        const Matrix delta = scale_matrix(direction, eps);
        const double predicted = eps == 0.0 ? 0.0 : predict_loss_delta(tap, delta);
        const double measured =
            eps == 0.0 ? 0.0
                       : forward(perturb_weights(net, layer, delta), batch).loss -
                             base.loss;
        eps_col.push_back(eps);
        predicted_col.push_back(predicted);
        measured_col.push_back(measured);
        gap_col.push_back(std::fabs(predicted - measured));
    }

    result.scalars["base_loss"] = base.loss;
    result.scalars["slope"] = log_log_slope(eps_col, gap_col);
    result.series["eps"] = std::move(eps_col);
    result.series["predicted"] = std::move(predicted_col);
    result.series["measured"] = std::move(measured_col);
    result.series["gap"] = std::move(gap_col);
    return result;
}

ExperimentResult run_cross_layer(const Network& net, const Batch& batch,
                                 const QuantSpec& spec, bool disable_quant) {
    ExperimentResult result;
    result.experiment = "cross-layer";

    const std::vector<std::string> names = linear_layer_names(net);
    const ForwardResult clean = backward(net, batch, names);

    std::map<std::string, std::vector<double>> alpha_clean;
    for (const std::string& name : names) {
        alpha_clean[name] = exact_sensitivity(clean.tap(name)).scores;
    }

    auto quant_delta = [&](const Matrix& w) {
        if (disable_quant) {
            return Matrix(w.rows(), w.cols());
        }
        return quantize_rtn(w, spec).delta;
    };

    double sum_individual = 0.0;
    for (const std::string& name : names) {
        const Matrix delta = quant_delta(net.layer(name).weight);
        const double loss = forward(perturb_weights(net, name, delta), batch).loss;
        sum_individual += loss - clean.loss;
    }

    Network cur = net;
    std::vector<double> cum_loss;
    double max_drift = 0.0;
    for (std::size_t s = 0; s < names.size(); ++s) {
        const Matrix delta = quant_delta(cur.layer(names[s]).weight);
        cur = perturb_weights(cur, names[s], delta);

        const std::vector<std::string> downstream(names.begin() + s + 1, names.end());
        const ForwardResult after = backward(cur, batch, downstream);
        cum_loss.push_back(after.loss - clean.loss);
        for (const std::string& name : downstream) {
            const std::vector<double> alpha_after =
                exact_sensitivity(after.tap(name)).scores;
            const double drift = drift_l1(alpha_clean[name], alpha_after);
            result.series["drift_" + name].push_back(drift);
            max_drift = std::max(max_drift, drift);
        }
    }

    const double joint = cum_loss.empty() ? 0.0 : cum_loss.back();
    result.scalars["joint_loss_delta"] = joint;
    result.scalars["sum_individual_deltas"] = sum_individual;
    result.scalars["accumulation_gap"] = joint - sum_individual;
    result.scalars["max_downstream_drift"] = max_drift;
    result.series["cum_loss_delta"] = std::move(cum_loss);
    return result;
}

ExperimentResult run_calibration_mismatch(const Network& net, const DistSpec& calib,
                                          const DistSpec& deploy, const TaskSpec& task,
                                          std::size_t n, const std::string& layer,
                                          const QuantSpec& spec,
                                          const std::vector<double>& alpha_grid) {
    ExperimentResult result;
    result.experiment = "calibration-mismatch";

    const Batch batch_calib = sample(calib, task, n);
    const Batch batch_deploy = sample(deploy, task, n);

    const ForwardResult res_calib = backward(net, batch_calib, {layer});
    const ForwardResult res_deploy = backward(net, batch_deploy, {layer});
    const LayerTap& tap_calib = res_calib.tap(layer);
    const LayerTap& tap_deploy = res_deploy.tap(layer);

    for (MetricKind kind : kChannelMetrics) {
        const auto on_calib = channel_scores(kind, tap_calib);
        const auto on_deploy = channel_scores(kind, tap_deploy);
        result.scalars[std::string("rank_corr_") + metric_name(kind)] =
            spearman(on_calib, on_deploy);
    }

    const Matrix& w = net.layer(layer).weight;
    const QuantizedLayer protected_on_calib =
        quantize_awq(w, tap_calib, exact_sensitivity(tap_calib), spec, alpha_grid);
    const QuantizedLayer protected_on_deploy =
        quantize_awq(w, tap_deploy, exact_sensitivity(tap_deploy), spec, alpha_grid);

    const double deploy_base = res_deploy.loss;
    result.scalars["awq_damage_calib_protected"] =
        forward(perturb_weights(net, layer, protected_on_calib.delta), batch_deploy)
            .loss -
        deploy_base;
    result.scalars["awq_damage_deploy_protected"] =
        forward(perturb_weights(net, layer, protected_on_deploy.delta), batch_deploy)
            .loss -
        deploy_base;
    return result;
}

ExperimentResult run_static_vs_adaptive(const Network& net, const Batch& batch,
                                        const QuantSpec& spec,
                                        const std::vector<double>& alpha_grid,
                                        bool disable_quant) {
    ExperimentResult result;
    result.experiment = "static-vs-adaptive";

    const std::vector<std::string> names = linear_layer_names(net);
    const ForwardResult clean = backward(net, batch, names);

    std::map<std::string, SensitivityReport> reports_clean;
    for (const std::string& name : names) {
        reports_clean[name] = exact_sensitivity(clean.tap(name));
    }

    Network net_static = net;
    for (const std::string& name : names) {
        if (disable_quant) {
            continue;
        }
        const QuantizedLayer q = quantize_awq(net.layer(name).weight, clean.tap(name),
                                              reports_clean[name], spec, alpha_grid);
        net_static = perturb_weights(net_static, name, q.delta);
    }
    result.scalars["loss_delta_static"] =
        forward(net_static, batch).loss - clean.loss;

    Network net_adaptive = net;
    for (const std::string& name : names) {
        const ForwardResult fresh = backward(net_adaptive, batch, {name});
        const SensitivityReport report_fresh = exact_sensitivity(fresh.tap(name));
        result.scalars["rank_corr_" + name] =
            spearman(reports_clean[name].scores, report_fresh.scores);
        if (disable_quant) {
            continue;
        }
        const QuantizedLayer q =
            quantize_awq(net_adaptive.layer(name).weight, fresh.tap(name),
                         report_fresh, spec, alpha_grid);
        net_adaptive = perturb_weights(net_adaptive, name, q.delta);
    }
    result.scalars["loss_delta_adaptive"] =
        forward(net_adaptive, batch).loss - clean.loss;
    return result;
}

ExperimentResult run_static_vs_adaptive_trials(
    const std::vector<std::string>& arch, LossKind loss, const DistSpec& dist_template,
    double noise_scale, std::size_t n, const QuantSpec& spec,
    const std::vector<double>& alpha_grid, std::size_t trials, std::uint64_t seed) {
    if (trials == 0) {
        throw ValidationError("trials must be >= 1");
    }
    ExperimentResult result;
    result.experiment = "static-vs-adaptive";
    result.seed = seed;

    std::vector<double> deltas_static, deltas_adaptive;
    double wins_static = 0.0, wins_adaptive = 0.0, ties = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::uint64_t trial_seed = derive_seed(seed, "trial" + std::to_string(t));
        Rng rng_net(derive_seed(trial_seed, "net"));
        Rng rng_teacher(derive_seed(trial_seed, "teacher"));
        const Network net = random_network(arch, loss, rng_net);
        TaskSpec task{random_network(arch, loss, rng_teacher), noise_scale};
        DistSpec dist = dist_template;
        dist.seed = derive_seed(trial_seed, "data");
        const Batch batch = sample(dist, task, n);

        const ExperimentResult one = run_static_vs_adaptive(net, batch, spec, alpha_grid);
        const double ds = one.scalars.at("loss_delta_static");
        const double da = one.scalars.at("loss_delta_adaptive");
        deltas_static.push_back(ds);
        deltas_adaptive.push_back(da);
        if (ds < da) {
            wins_static += 1.0;
        } else if (da < ds) {
            wins_adaptive += 1.0;
        } else {
            ties += 1.0;
        }
    }

    double mean_static = 0.0, mean_adaptive = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        mean_static += deltas_static[t];
        mean_adaptive += deltas_adaptive[t];
    }
    mean_static /= static_cast<double>(trials);
    mean_adaptive /= static_cast<double>(trials);

    result.scalars["trials"] = static_cast<double>(trials);
    result.scalars["wins_static"] = wins_static;
    result.scalars["wins_adaptive"] = wins_adaptive;
    result.scalars["ties"] = ties;
    result.scalars["mean_delta_static"] = mean_static;
    result.scalars["mean_delta_adaptive"] = mean_adaptive;
    result.series["delta_static"] = std::move(deltas_static);
    result.series["delta_adaptive"] = std::move(deltas_adaptive);
    return result;
}

ExperimentResult run_proxy_ranking(const Network& net, const Batch& batch,
                                   const std::string& layer, const QuantSpec& spec,
                                   double delta_scale) {
    ExperimentResult result;
    result.experiment = "proxy-ranking";

    const ForwardResult base = backward(net, batch, {layer});
    const LayerTap& tap = base.tap(layer);
    const Matrix& w = net.layer(layer).weight;
    const Matrix full_delta = scale_matrix(quantize_rtn(w, spec).delta, delta_scale);
    const std::size_t d_in = w.cols();

    std::vector<double> damage(d_in, 0.0), predicted(d_in, 0.0), abs_damage(d_in, 0.0);
    for (std::size_t j = 0; j < d_in; ++j) {
        const Matrix delta_j = column_slice(full_delta, j);
        damage[j] = forward(perturb_weights(net, layer, delta_j), batch).loss - base.loss;
        predicted[j] = predict_loss_delta(tap, delta_j);
        abs_damage[j] = std::fabs(damage[j]);
    }
    const double joint =
        forward(perturb_weights(net, layer, full_delta), batch).loss - base.loss;
    double damage_sum = 0.0;
    for (double v : damage) {
        damage_sum += v;
    }

    bool zero_variance = true;
    for (std::size_t j = 1; j < d_in; ++j) {
        zero_variance = zero_variance && abs_damage[j] == abs_damage[0];
    }

    for (MetricKind kind : kChannelMetrics) {
        result.scalars[std::string("rank_corr_") + metric_name(kind)] =
            spearman(channel_scores(kind, tap), abs_damage);
    }
    result.scalars["rank_corr_predicted"] = spearman(predicted, damage);
    result.scalars["joint_damage"] = joint;
    result.scalars["interaction_gap"] = joint - damage_sum;
    result.scalars["damage_zero_variance"] = zero_variance ? 1.0 : 0.0;
    result.series["damage"] = std::move(damage);
    result.series["abs_damage"] = std::move(abs_damage);
    result.series["predicted"] = std::move(predicted);
    return result;
}

}  // namespace sensiq
