#include <doctest.h>

#include <cmath>
#include <vector>

#include "sensiq/errors.hpp"
#include "sensiq/net.hpp"
#include "sensiq/quantize.hpp"
#include "sensiq/rng.hpp"
#include "sensiq/sensitivity.hpp"

using namespace sensiq;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) {
        v = scale * rng.gaussian();
    }
    return m;
}

QuantSpec spec_bits(int bits, QuantGranularity g = QuantGranularity::per_channel_in) {
    QuantSpec spec;
    spec.bits = bits;
    spec.granularity = g;
    return spec;
}

LayerTap tap_of(Matrix x, Matrix g = Matrix()) {
    LayerTap tap;
    tap.layer_name = "fc0";
    tap.x = std::move(x);
    tap.g = std::move(g);
    return tap;
}

bool on_grid(const QuantizedLayer& q) {
    const double lo = -std::pow(2.0, q.spec.bits - 1);
    const double hi = std::pow(2.0, q.spec.bits - 1) - 1.0;
    for (double level : q.q_weight.data()) {
        if (level != std::floor(level) || level < lo || level > hi) {
            return false;
        }
    }
    return true;
}

// Exhaustive search over every grid assignment of a single-row weight,
// using the same scales the quantizers used.
double brute_force_best(const Matrix& w, const Matrix& h, const QuantizedLayer& q) {
    const std::size_t d = w.cols();
    const double lo = -std::pow(2.0, q.spec.bits - 1);
    const double hi = std::pow(2.0, q.spec.bits - 1) - 1.0;
    const std::size_t levels = static_cast<std::size_t>(hi - lo + 1.0);
    std::size_t total = 1;
    for (std::size_t j = 0; j < d; ++j) {
        total *= levels;
    }
    double best = -1.0;
    for (std::size_t code = 0; code < total; ++code) {
        std::size_t rest = code;
        Matrix delta(1, d);
        for (std::size_t j = 0; j < d; ++j) {
            const double level = lo + static_cast<double>(rest % levels);
            rest /= levels;
            delta.at(0, j) = level * q.scales[scale_group_of(q.spec, j)] - w.at(0, j);
        }
        const double err = quadratic_error(delta, h);
        if (best < 0.0 || err < best) {
            best = err;
        }
    }
    return best;
}

}  // namespace

TEST_SUITE_BEGIN("quantize");

TEST_CASE("grid rule: round half away from zero, clamp") {
    CHECK(grid_level(0.4, 1.0, 2) == 0.0);
    CHECK(grid_level(1.6, 1.0, 2) == 1.0);   // rounds to 2, clamps to top level
    CHECK(grid_level(-2.3, 1.0, 2) == -2.0);
    CHECK(grid_level(0.5, 1.0, 3) == 1.0);   // half away from zero
    CHECK(grid_level(-0.5, 1.0, 3) == -1.0);
}

TEST_CASE("rtn per-scalar optimality with ties away from zero") {
    Rng rng(201);
    for (int trial = 0; trial < 2000; ++trial) {
        const int bits = 2 + static_cast<int>(rng.next_u64() % 7);
        const double scale = 0.05 + rng.uniform();
        const double w = 4.0 * (rng.uniform() - 0.5);
        const double level = grid_level(w, scale, bits);
        const double err = std::fabs(w - level * scale);
        const double lo = -std::pow(2.0, bits - 1);
        const double hi = std::pow(2.0, bits - 1) - 1.0;
        for (double cand = lo; cand <= hi; cand += 1.0) {
            const double cand_err = std::fabs(w - cand * scale);
            CHECK(err <= cand_err + 1e-15);
            if (cand_err == err && cand != level) {
                CHECK(std::fabs(level) > std::fabs(cand));
            }
        }
    }
}

TEST_CASE("rtn leaves on-grid weights untouched") {
    const Matrix w(2, 2, {-1.0, 0.0, 1.0, 0.5});
    QuantSpec spec = spec_bits(2, QuantGranularity::per_channel_in);
    // Columns: {-1, 1} and {0, 0.5}; absmax scales 1 and 0.5.
    const QuantizedLayer q = quantize_rtn(w, spec);
    CHECK(q.delta == Matrix(2, 2));
    CHECK(q.dequantized() == w);
}

TEST_CASE("rtn idempotence on dequantized values") {
    Rng rng(202);
    for (QuantGranularity g :
         {QuantGranularity::per_tensor, QuantGranularity::per_channel_in}) {
        for (int bits : {2, 3, 4, 8}) {
            const Matrix w = random_matrix(4, 6, rng);
            const QuantizedLayer q1 = quantize_rtn(w, spec_bits(bits, g));
            const Matrix deq = q1.dequantized();
            const QuantizedLayer q2 = quantize_rtn(deq, spec_bits(bits, g));
            CHECK(q2.dequantized() == deq);
        }
    }
}

TEST_CASE("rtn zero group convention") {
    const Matrix w(2, 2, {0.0, 3.0, 0.0, -1.5});
    const QuantizedLayer q = quantize_rtn(w, spec_bits(4));
    CHECK(q.scales[0] == 1.0);
    CHECK(q.zero_scale_groups == std::vector<std::size_t>{0});
    CHECK(q.delta.at(0, 0) == 0.0);
}

TEST_CASE("rtn grid validity across random inputs") {
    Rng rng(203);
    for (int trial = 0; trial < 30; ++trial) {
        const int bits = 2 + static_cast<int>(rng.next_u64() % 7);
        const Matrix w = random_matrix(3, 8, rng, 2.0);
        QuantSpec spec = spec_bits(bits);
        if (trial % 3 == 0) {
            spec.granularity = QuantGranularity::per_tensor;
        } else if (trial % 3 == 2) {
            spec.group_size = 4;
        }
        const QuantizedLayer q = quantize_rtn(w, spec);
        CHECK(on_grid(q));
        // delta is recomputable from the stored fields.
        const Matrix deq = q.dequantized();
        for (std::size_t i = 0; i < w.size(); ++i) {
            CHECK(deq.data()[i] - q.delta.data()[i] ==
                  doctest::Approx(w.data()[i]).epsilon(1e-15));
        }
    }
}

TEST_CASE("grid-search-mse never loses to absmax on its objective") {
    Rng rng(204);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix w = random_matrix(4, 4, rng);
        QuantSpec absmax = spec_bits(3);
        QuantSpec searched = spec_bits(3);
        searched.scale_policy = ScalePolicy::grid_search_mse;
        const double err_absmax = frobenius_sq(quantize_rtn(w, absmax).delta);
        const double err_search = frobenius_sq(quantize_rtn(w, searched).delta);
        CHECK(err_search <= err_absmax + 1e-12);
    }
}

TEST_CASE("spec validation") {
    const Matrix w(1, 4);
    QuantSpec bad = spec_bits(1);
    CHECK_THROWS_AS(quantize_rtn(w, bad), ValidationError);
    bad = spec_bits(9);
    CHECK_THROWS_AS(quantize_rtn(w, bad), ValidationError);
    bad = spec_bits(4);
    bad.symmetric = false;
    CHECK_THROWS_AS(quantize_rtn(w, bad), ValidationError);
    bad = spec_bits(4);
    bad.group_size = 3;
    CHECK_THROWS_AS(quantize_rtn(w, bad), ValidationError);
}

TEST_CASE("awq alpha 0 reproduces rtn") {
    Rng rng(205);
    const Matrix w = random_matrix(3, 5, rng);
    const Matrix x = random_matrix(8, 5, rng);
    QuantSpec spec = spec_bits(3, QuantGranularity::per_tensor);
    SensitivityReport report = magnitude(tap_of(x));

    const QuantizedLayer rtn = quantize_rtn(w, spec);
    const QuantizedLayer awq = quantize_awq(w, tap_of(x), report, spec, {0.0});
    CHECK(awq.alpha == 0.0);
    CHECK(awq.q_weight == rtn.q_weight);
    CHECK(awq.dequantized() == rtn.dequantized());
}

TEST_CASE("awq scaling is lossless at full precision") {
    Rng rng(206);
    const Matrix w = random_matrix(4, 6, rng);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> s(6);
        for (double& v : s) {
            v = 0.01 + 3.0 * rng.uniform();
        }
        Matrix scaled = w;
        for (std::size_t i = 0; i < w.rows(); ++i) {
            for (std::size_t j = 0; j < w.cols(); ++j) {
                scaled.at(i, j) = scaled.at(i, j) * s[j] / s[j];
            }
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            CHECK(scaled.data()[i] == doctest::Approx(w.data()[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("awq grid choice never beats alpha 0 at the H-weighted objective") {
    Rng rng(207);
    const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix w = random_matrix(2, 6, rng);
        Matrix x = random_matrix(10, 6, rng);
        // One dominant activation channel.
        for (std::size_t i = 0; i < x.rows(); ++i) {
            x.at(i, 0) *= 8.0;
        }
        QuantSpec spec = spec_bits(3, QuantGranularity::per_tensor);
        const SensitivityReport report = magnitude(tap_of(x));
        const Matrix h = hessian_surrogate(x);

        const QuantizedLayer chosen = quantize_awq(w, tap_of(x), report, spec, grid);
        const QuantizedLayer at_zero = quantize_awq(w, tap_of(x), report, spec, {0.0});
        CHECK(quadratic_error(chosen.delta, h) <=
              quadratic_error(at_zero.delta, h) + 1e-12);
        CHECK(on_grid(chosen));
    }
}

TEST_CASE("awq validates inputs") {
    const Matrix w(2, 3);
    const Matrix x(4, 3);
    SensitivityReport report = magnitude(tap_of(x));
    CHECK_THROWS_AS(quantize_awq(w, tap_of(x), report, spec_bits(4), {}),
                    ValidationError);
    CHECK_THROWS_AS(quantize_awq(w, tap_of(x), report, spec_bits(4), {1.5}),
                    ValidationError);
    SensitivityReport short_report = report;
    short_report.scores.pop_back();
    CHECK_THROWS_AS(quantize_awq(w, tap_of(x), short_report, spec_bits(4), {0.0}),
                    ShapeError);
}

TEST_CASE("obs with diagonal surrogate equals rtn") {
    Rng rng(208);
    const Matrix w = random_matrix(3, 5, rng);
    Matrix h(5, 5);
    for (std::size_t j = 0; j < 5; ++j) {
        h.at(j, j) = 0.5 + rng.uniform();
    }
    const QuantizedLayer obs = quantize_obs(w, h, spec_bits(3), ObsOrder::desc_diag);
    const QuantizedLayer rtn = quantize_rtn(w, spec_bits(3));
    CHECK(obs.q_weight == rtn.q_weight);
    CHECK(obs.delta == rtn.delta);
}

TEST_CASE("obs leaves exactly representable weights untouched") {
    // Entries sit exactly on their per-channel absmax grids (b=4, level 7).
    const Matrix w(1, 3, {0.875, -0.4375, 1.75});
    Rng rng(209);
    const Matrix x = random_matrix(6, 3, rng);
    const QuantizedLayer q =
        quantize_obs(w, hessian_surrogate(x), spec_bits(4), ObsOrder::desc_diag);
    CHECK(q.delta == Matrix(1, 3));
}

TEST_CASE("obs brute-force sandwich at b=2") {
    Rng rng(210);
    int trials = 0;
    for (std::uint64_t seed = 0; trials < 25; ++seed) {
        Rng trial_rng(derive_seed(210, "obs" + std::to_string(seed)));
        const Matrix w = random_matrix(1, 4, trial_rng);
        const Matrix x = random_matrix(8, 4, trial_rng);
        const Matrix h = hessian_surrogate(x);
        const QuantSpec spec = spec_bits(2);

        const QuantizedLayer rtn = quantize_rtn(w, spec);
        const QuantizedLayer obs = quantize_obs(w, h, spec, ObsOrder::desc_diag);
        const double err_rtn = quadratic_error(rtn.delta, h);
        const double err_obs = quadratic_error(obs.delta, h);
        const double err_best = brute_force_best(w, h, rtn);

        CHECK(err_best <= err_obs + 1e-9);
        CHECK(err_obs <= err_rtn + 1e-9);
        CHECK(on_grid(obs));
        ++trials;
    }
}

TEST_CASE("obs dominance on the quadratic objective") {
    Rng rng(211);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 4 + rng.next_u64() % 5;
        const std::size_t n = d + 2 + rng.next_u64() % 8;
        const Matrix w = random_matrix(3, d, rng);
        const Matrix x = random_matrix(n, d, rng);
        const Matrix h = hessian_surrogate(x);
        const int bits = 2 + static_cast<int>(rng.next_u64() % 3);
        for (ObsOrder order : {ObsOrder::desc_diag, ObsOrder::natural}) {
            const double err_obs =
                quadratic_error(quantize_obs(w, h, spec_bits(bits), order).delta, h);
            const double err_rtn =
                quadratic_error(quantize_rtn(w, spec_bits(bits)).delta, h);
            CHECK(err_obs <= err_rtn + 1e-9);
        }
    }
}

TEST_CASE("obs weighted equals unweighted for unit row norms") {
    Rng rng(212);
    const Matrix w = random_matrix(2, 4, rng);
    const Matrix x = random_matrix(6, 4, rng);
    // Gradient rows with unit norm make D the identity.
    Matrix g(6, 2);
    for (std::size_t i = 0; i < 6; ++i) {
        g.at(i, 0) = 1.0;
    }
    const QuantizedLayer weighted =
        quantize_obs_weighted(w, tap_of(x, g), spec_bits(3));
    const QuantizedLayer plain = quantize_obs(w, hessian_surrogate(x), spec_bits(3));
    CHECK(weighted.q_weight == plain.q_weight);
    CHECK(weighted.delta == plain.delta);
}

TEST_CASE("obs weighted rejects degenerate curvature") {
    Rng rng(213);
    const Matrix w = random_matrix(2, 3, rng);
    const Matrix x = random_matrix(5, 3, rng);
    CHECK_THROWS_AS(quantize_obs_weighted(w, tap_of(x, Matrix(5, 2)), spec_bits(3)),
                    NumericalError);
}

TEST_CASE("obs weighted vs unweighted paired trials, outcome recorded") {
    // Comparative outcome only; no direction asserted.
    Rng rng(214);
    int weighted_wins = 0, plain_wins = 0, ties = 0;
    const int trials = 40;
    for (int t = 0; t < trials; ++t) {
        Network net = random_network({"linear:3x4", "relu", "linear:2x3"},
                                     LossKind::mse, rng);
        Batch batch{random_matrix(8, 4, rng), random_matrix(8, 2, rng)};
        // One sample with a dominant gradient row.
        for (std::size_t j = 0; j < 2; ++j) {
            batch.targets.at(0, j) += 25.0;
        }
        const ForwardResult res = backward(net, batch, {"fc0"});
        const LayerTap& tap = res.tap("fc0");
        const QuantSpec spec = spec_bits(3);

        const QuantizedLayer weighted = quantize_obs_weighted(
            net.layer("fc0").weight, tap, spec, ObsOrder::desc_diag);
        const QuantizedLayer plain = quantize_obs(
            net.layer("fc0").weight, hessian_surrogate(tap.x), spec,
            ObsOrder::desc_diag);

        const double damage_weighted = std::fabs(
            forward(perturb_weights(net, "fc0", weighted.delta), batch).loss - res.loss);
        const double damage_plain = std::fabs(
            forward(perturb_weights(net, "fc0", plain.delta), batch).loss - res.loss);
        if (damage_weighted < damage_plain) {
            ++weighted_wins;
        } else if (damage_plain < damage_weighted) {
            ++plain_wins;
        } else {
            ++ties;
        }
    }
    CHECK(weighted_wins + plain_wins + ties == trials);
    MESSAGE("gradient-weighted OBS wins " << weighted_wins << "/" << trials
                                          << " (plain " << plain_wins << ", ties "
                                          << ties << ")");
}

TEST_CASE("allocate_bits at the top budget keeps every layer wide") {
    Rng rng(215);
    Network net = random_network({"linear:4x6", "relu", "linear:4x4", "relu",
                                  "linear:3x4"},
                                 LossKind::mse, rng);
    Batch batch{random_matrix(8, 6, rng), random_matrix(8, 3, rng)};
    const auto names = linear_layer_names(net);
    const ForwardResult res = backward(net, batch, names);
    std::map<std::string, SensitivityReport> reports;
    for (const auto& name : names) {
        reports[name] = exact_sensitivity(res.tap(name));
    }
    const BitAllocation alloc =
        allocate_bits(net, reports, {2, 3, 4}, 4.0, spec_bits(4));
    for (const auto& [name, bits] : alloc.per_layer_bits) {
        CHECK(bits == 4);
    }
}

TEST_CASE("allocate_bits demotes the lexicographically first of equals") {
    Network net;
    const Matrix w(2, 2, {1.0, -0.5, 0.25, 0.75});
    net.layers.push_back(Layer::linear("alpha", w, {0, 0}));
    net.layers.push_back(Layer::linear("beta", w, {0, 0}));
    std::map<std::string, SensitivityReport> reports;
    for (const char* name : {"alpha", "beta"}) {
        SensitivityReport r;
        r.layer_name = name;
        r.metric = MetricKind::magnitude;
        r.granularity = Granularity::channel;
        r.d_in = 2;
        r.scores = {1.0, 1.0};
        r.n_samples = 1;
        reports[name] = r;
    }
    const BitAllocation alloc =
        allocate_bits(net, reports, {2, 4}, 3.0, spec_bits(4));
    CHECK(alloc.per_layer_bits.at("alpha") == 2);
    CHECK(alloc.per_layer_bits.at("beta") == 4);
}

TEST_CASE("allocate_bits cost is non-increasing in budget") {
    Rng rng(216);
    Network net = random_network(
        {"linear:5x6", "relu", "linear:5x5", "relu", "linear:4x5", "relu",
         "linear:3x4"},
        LossKind::mse, rng);
    Batch batch{random_matrix(10, 6, rng), random_matrix(10, 3, rng)};
    const auto names = linear_layer_names(net);
    const ForwardResult res = backward(net, batch, names);
    std::map<std::string, SensitivityReport> reports;
    for (const auto& name : names) {
        reports[name] = exact_sensitivity(res.tap(name));
    }
    double prev = -1.0;
    for (double budget : {4.0, 3.5, 3.0, 2.5}) {
        const BitAllocation alloc =
            allocate_bits(net, reports, {2, 3, 4}, budget, spec_bits(4));
        double avg = 0.0;
        for (const auto& [name, bits] : alloc.per_layer_bits) {
            avg += bits;
        }
        avg /= static_cast<double>(alloc.per_layer_bits.size());
        CHECK(avg <= budget + 1e-12);
        if (prev >= 0.0) {
            CHECK(alloc.predicted_cost >= prev - 1e-12);
        }
        prev = alloc.predicted_cost;
    }
}

TEST_CASE("allocate_bits rejects infeasible budgets") {
    Rng rng(217);
    Network net = random_network({"linear:2x2"}, LossKind::mse, rng);
    Batch batch{random_matrix(4, 2, rng), random_matrix(4, 2, rng)};
    const ForwardResult res = backward(net, batch, {"fc0"});
    std::map<std::string, SensitivityReport> reports{
        {"fc0", exact_sensitivity(res.tap("fc0"))}};
    CHECK_THROWS_AS(allocate_bits(net, reports, {2, 4}, 1.5, spec_bits(4)),
                    ValidationError);
    CHECK_THROWS_AS(allocate_bits(net, reports, {2, 4}, 5.0, spec_bits(4)),
                    ValidationError);
    CHECK_THROWS_AS(allocate_bits(net, reports, {4, 2}, 3.0, spec_bits(4)),
                    ValidationError);
}

TEST_SUITE_END();
