#include "sensiq/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sensiq/errors.hpp"

namespace sensiq {

namespace {

void require_x(const LayerTap& tap) {
    if (tap.x.empty()) {
        throw StateError("tap for '" + tap.layer_name + "' has no activations");
    }
}

void require_g(const LayerTap& tap) {
    require_x(tap);
    if (!tap.has_g()) {
        throw StateError("tap for '" + tap.layer_name +
                         "' has no gradient; run a backward pass");
    }
    if (tap.g.rows() != tap.x.rows()) {
        throw ShapeError("tap for '" + tap.layer_name + "': x has " +
                         std::to_string(tap.x.rows()) + " rows, g has " +
                         std::to_string(tap.g.rows()));
    }
}

SensitivityReport make_report(const LayerTap& tap, MetricKind kind,
                              Granularity gran, std::size_t d_out,
                              std::vector<double> scores) {
    SensitivityReport r;
    r.layer_name = tap.layer_name;
    r.metric = kind;
    r.granularity = gran;
    r.d_in = tap.x.cols();
    r.d_out = d_out;
    r.scores = std::move(scores);
    r.n_samples = tap.n();
    return r;
}

// Average ranks, ties averaged.
std::vector<double> ranks_of(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) {
            ++j;
        }
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    return ranks;
}

}  // namespace

SensitivityReport exact_sensitivity(const LayerTap& tap) {
    require_g(tap);
    const Matrix& x = tap.x;
    const Matrix& g = tap.g;
    const std::size_t n = x.rows();
    const std::size_t d_in = x.cols();
    const std::size_t d_out = g.cols();
    std::vector<double> scores(d_in, 0.0);
    for (std::size_t j = 0; j < d_in; ++j) {
        double norm_sq = 0.0;
        for (std::size_t k = 0; k < d_out; ++k) {
            double coeff = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                coeff += g.at(i, k) * x.at(i, j);
            }
            norm_sq += coeff * coeff;
        }
        scores[j] = norm_sq / static_cast<double>(n);
    }
    return make_report(tap, MetricKind::exact_sensitivity, Granularity::channel,
                       d_out, std::move(scores));
}

SensitivityReport quadratic_diag_d(const LayerTap& tap) {
    require_g(tap);
    const Matrix& x = tap.x;
    const std::size_t n = x.rows();
    const std::size_t d_in = x.cols();
    const std::vector<double> d = row_norms_sq(tap.g);
    std::vector<double> scores(d_in, 0.0);
    for (std::size_t j = 0; j < d_in; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += d[i] * x.at(i, j) * x.at(i, j);
        }
        scores[j] = acc / static_cast<double>(n);
    }
    return make_report(tap, MetricKind::quadratic_diag_d, Granularity::channel,
                       tap.g.cols(), std::move(scores));
}

SensitivityReport magnitude(const LayerTap& tap) {
    require_x(tap);
    const Matrix& x = tap.x;
    const std::size_t n = x.rows();
    std::vector<double> scores(x.cols(), 0.0);
    for (std::size_t j = 0; j < x.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += x.at(i, j) * x.at(i, j);
        }
        scores[j] = acc / static_cast<double>(n);
    }
    return make_report(tap, MetricKind::magnitude, Granularity::channel,
                       tap.y.cols(), std::move(scores));
}

SensitivityReport covariance(const LayerTap& tap) {
    SensitivityReport r = magnitude(tap);
    r.metric = MetricKind::covariance;
    return r;
}

SensitivityReport fisher_diag(const LayerTap& tap) {
    require_g(tap);
    const Matrix& x = tap.x;
    const Matrix& g = tap.g;
    const std::size_t n = x.rows();
    const std::size_t d_in = x.cols();
    const std::size_t d_out = g.cols();
    std::vector<double> scores(d_out * d_in, 0.0);
    for (std::size_t k = 0; k < d_out; ++k) {
        for (std::size_t j = 0; j < d_in; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double t = g.at(i, k) * x.at(i, j);
                acc += t * t;
            }
            scores[k * d_in + j] = acc / static_cast<double>(n);
        }
    }
    return make_report(tap, MetricKind::fisher_diag, Granularity::weight, d_out,
                       std::move(scores));
}

SensitivityReport grad_saliency(const LayerTap& tap) {
    require_g(tap);
    const Matrix grad = matmul(transpose(tap.g), tap.x);  // d_out x d_in
    std::vector<double> scores(grad.size());
    for (std::size_t i = 0; i < grad.size(); ++i) {
        scores[i] = std::fabs(grad.data()[i]);
    }
    return make_report(tap, MetricKind::grad_saliency, Granularity::weight,
                       grad.rows(), std::move(scores));
}

SensitivityReport obd_weight(const LayerTap& tap, const Matrix& weight) {
    require_x(tap);
    if (weight.cols() != tap.x.cols()) {
        throw ShapeError("obd_weight: weight has d_in " + std::to_string(weight.cols()) +
                         ", tap has " + std::to_string(tap.x.cols()));
    }
    const Matrix& x = tap.x;
    const std::size_t n = x.rows();
    const std::size_t d_in = x.cols();
    std::vector<double> h_diag(d_in, 0.0);
    for (std::size_t j = 0; j < d_in; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += x.at(i, j) * x.at(i, j);
        }
        h_diag[j] = acc / static_cast<double>(n);
    }
    std::vector<double> scores(weight.size());
    for (std::size_t k = 0; k < weight.rows(); ++k) {
        for (std::size_t j = 0; j < d_in; ++j) {
            const double w = weight.at(k, j);
            scores[k * d_in + j] = 0.5 * w * w * h_diag[j];
        }
    }
    return make_report(tap, MetricKind::obd_weight, Granularity::weight,
                       weight.rows(), std::move(scores));
}

std::vector<double> channel_reduction(const SensitivityReport& report) {
    if (report.granularity != Granularity::weight) {
        return report.scores;
    }
    std::vector<double> out(report.d_in, 0.0);
    for (std::size_t k = 0; k < report.d_out; ++k) {
        for (std::size_t j = 0; j < report.d_in; ++j) {
            const double s = report.scores[k * report.d_in + j];
            out[j] += report.metric == MetricKind::grad_saliency ? s * s : s;
        }
    }
    if (report.metric == MetricKind::grad_saliency) {
        for (double& v : out) {
            v = std::sqrt(v);
        }
    }
    return out;
}

double predict_loss_delta(const LayerTap& tap, const Matrix& delta) {
    require_g(tap);
    if (delta.rows() != tap.g.cols() || delta.cols() != tap.x.cols()) {
        throw ShapeError("predict_loss_delta: delta is " + std::to_string(delta.rows()) +
                         "x" + std::to_string(delta.cols()) + ", expected " +
                         std::to_string(tap.g.cols()) + "x" +
                         std::to_string(tap.x.cols()));
    }
    const Matrix grad = matmul(transpose(tap.g), tap.x);
    double acc = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        acc += grad.data()[i] * delta.data()[i];
    }
    return acc;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw ShapeError("spearman: lengths differ");
    }
    if (a.size() < 2) {
        throw ValidationError("spearman: need at least 2 entries");
    }
    if (a == b) {
        return 1.0;
    }
    const auto ra = ranks_of(a);
    const auto rb = ranks_of(b);
    const double n = static_cast<double>(a.size());
    double mean = (n + 1.0) / 2.0;
    double cov = 0.0, var_a = 0.0, var_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = ra[i] - mean;
        const double db = rb[i] - mean;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0) {
        return 0.0;
    }
    return cov / std::sqrt(var_a * var_b);
}

double rank_correlation(const SensitivityReport& a, const SensitivityReport& b) {
    if (a.granularity != b.granularity) {
        throw ShapeError("rank_correlation: reports have different granularity");
    }
    if (a.scores.size() != b.scores.size()) {
        throw ShapeError("rank_correlation: score lengths differ");
    }
    return spearman(a.scores, b.scores);
}

Matrix hessian_surrogate(const Matrix& x) {
    const std::size_t n = x.rows();
    Matrix h = matmul(transpose(x), x);
    for (double& v : h.data()) {
        v /= static_cast<double>(n);
    }
    return h;
}

Matrix weighted_hessian_surrogate(const Matrix& x, const Matrix& g) {
    if (g.rows() != x.rows()) {
        throw ShapeError("weighted surrogate: x and g row counts differ");
    }
    const std::size_t n = x.rows();
    const std::vector<double> d = row_norms_sq(g);
    Matrix h(x.cols(), x.cols());
    for (std::size_t a = 0; a < x.cols(); ++a) {
        for (std::size_t b = 0; b < x.cols(); ++b) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d[i] * x.at(i, a) * x.at(i, b);
            }
            h.at(a, b) = acc / static_cast<double>(n);
        }
    }
    return h;
}

const char* metric_name(MetricKind kind) {
    switch (kind) {
        case MetricKind::exact_sensitivity: return "exact-sensitivity";
        case MetricKind::quadratic_diag_d: return "quadratic-diagD";
        case MetricKind::magnitude: return "magnitude";
        case MetricKind::covariance: return "covariance";
        case MetricKind::fisher_diag: return "fisher-diag";
        case MetricKind::grad_saliency: return "grad-saliency";
        case MetricKind::obd_weight: return "obd-weight";
    }
    return "magnitude";
}

MetricKind metric_from_name(std::string_view name) {
    if (name == "exact-sensitivity") return MetricKind::exact_sensitivity;
    if (name == "quadratic-diagD") return MetricKind::quadratic_diag_d;
    if (name == "magnitude") return MetricKind::magnitude;
    if (name == "covariance") return MetricKind::covariance;
    if (name == "fisher-diag") return MetricKind::fisher_diag;
    if (name == "grad-saliency") return MetricKind::grad_saliency;
    if (name == "obd-weight") return MetricKind::obd_weight;
    throw LookupError("unknown metric '" + std::string(name) + "'");
}

Granularity metric_granularity(MetricKind kind) {
    switch (kind) {
        case MetricKind::fisher_diag:
        case MetricKind::grad_saliency:
        case MetricKind::obd_weight:
            return Granularity::weight;
        default:
            return Granularity::channel;
    }
}

}  // namespace sensiq
