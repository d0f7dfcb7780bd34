#include "sensiq/net.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "sensiq/errors.hpp"

namespace sensiq {

namespace {

void add_bias_rows(Matrix& z, const std::vector<double>& bias) {
    for (std::size_t i = 0; i < z.rows(); ++i) {
        for (std::size_t j = 0; j < z.cols(); ++j) {
            z.at(i, j) += bias[j];
        }
    }
}

Matrix relu_forward(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.data()) {
        v = v > 0.0 ? v : 0.0;
    }
    return out;
}

// Zeroes entries of g where the matching pre-activation is <= 0.
Matrix relu_backward(const Matrix& g, const Matrix& preact) {
    Matrix out = g;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(preact.data()[i] > 0.0)) {
            out.data()[i] = 0.0;
        }
    }
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] += b.data()[i];
    }
    return out;
}

double mse_loss(const Matrix& pred, const Matrix& targets) {
    const double n = static_cast<double>(pred.rows());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data()[i] - targets.data()[i];
        acc += d * d;
    }
    return acc / n;
}

Matrix mse_grad(const Matrix& pred, const Matrix& targets) {
    const double n = static_cast<double>(pred.rows());
    Matrix g(pred.rows(), pred.cols());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        g.data()[i] = 2.0 * (pred.data()[i] - targets.data()[i]) / n;
    }
    return g;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double m = logits.at(i, 0);
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            m = std::max(m, logits.at(i, j));
        }
        double z = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            const double e = std::exp(logits.at(i, j) - m);
            p.at(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            p.at(i, j) /= z;
        }
    }
    return p;
}

// Mean over rows of (log-sum-exp(z) - <t, z>); targets are per-row class
// distributions, typically one-hot.
double sce_loss(const Matrix& logits, const Matrix& targets) {
    const double n = static_cast<double>(logits.rows());
    double acc = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double m = logits.at(i, 0);
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            m = std::max(m, logits.at(i, j));
        }
        double z = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            z += std::exp(logits.at(i, j) - m);
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            dot += targets.at(i, j) * logits.at(i, j);
        }
        acc += m + std::log(z) - dot;
    }
    return acc / n;
}

Matrix sce_grad(const Matrix& logits, const Matrix& targets) {
    const double n = static_cast<double>(logits.rows());
    Matrix g = softmax_rows(logits);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.data()[i] = (g.data()[i] - targets.data()[i]) / n;
    }
    return g;
}

// Per-layer activations captured during the forward walk; enough state to
// run reverse accumulation without recomputation.
struct Trace {
    std::vector<Matrix> inputs;        // input to each layer
    std::vector<Matrix> res_hidden;    // resblock hidden pre-activation, else empty
    Matrix output;
};

Trace run_forward(const Network& net, const Matrix& inputs) {
    Trace trace;
    trace.inputs.reserve(net.layers.size());
    trace.res_hidden.resize(net.layers.size());
    Matrix cur = inputs;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const Layer& layer = net.layers[li];
        trace.inputs.push_back(cur);
        switch (layer.kind) {
            case LayerKind::linear: {
                Matrix z = matmul(cur, transpose(layer.weight));
                add_bias_rows(z, layer.bias);
                cur = std::move(z);
                break;
            }
            case LayerKind::relu:
                cur = relu_forward(cur);
                break;
            case LayerKind::resblock: {
                Matrix pre = matmul(cur, transpose(layer.w_in));
                add_bias_rows(pre, layer.b_in);
                trace.res_hidden[li] = pre;
                Matrix h = relu_forward(pre);
                Matrix z = matmul(h, transpose(layer.w_out));
                add_bias_rows(z, layer.b_out);
                cur = add(cur, z);
                break;
            }
        }
    }
    trace.output = std::move(cur);
    return trace;
}

// Maps tap names to layer indices, rejecting unknown or non-linear targets.
std::vector<std::size_t> resolve_taps(const Network& net,
                                      const std::vector<std::string>& tap_layers) {
    std::vector<std::size_t> indices;
    indices.reserve(tap_layers.size());
    for (const std::string& name : tap_layers) {
        const std::size_t idx = net.layer_index(name);
        if (net.layers[idx].kind != LayerKind::linear) {
            throw LookupError("tap target '" + name + "' is not a linear layer");
        }
        indices.push_back(idx);
    }
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    return indices;
}

void check_batch(const Network& net, const Batch& batch) {
    const auto [d_in, d_out] = validate_network(net);
    if (batch.inputs.rows() != batch.targets.rows()) {
        throw ShapeError("batch: inputs have " + std::to_string(batch.inputs.rows()) +
                         " rows, targets " + std::to_string(batch.targets.rows()));
    }
    if (batch.inputs.cols() != d_in) {
        throw ShapeError("batch inputs have dim " + std::to_string(batch.inputs.cols()) +
                         ", network expects " + std::to_string(d_in));
    }
    if (batch.targets.cols() != d_out) {
        throw ShapeError("batch targets have dim " + std::to_string(batch.targets.cols()) +
                         ", network produces " + std::to_string(d_out));
    }
}

}  // namespace

Layer Layer::linear(std::string name, Matrix weight, std::vector<double> bias) {
    if (bias.size() != weight.rows()) {
        throw ShapeError("linear layer '" + name + "': bias length " +
                         std::to_string(bias.size()) + " != d_out " +
                         std::to_string(weight.rows()));
    }
    Layer l;
    l.kind = LayerKind::linear;
    l.name = std::move(name);
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    return l;
}

Layer Layer::relu(std::string name) {
    Layer l;
    l.kind = LayerKind::relu;
    l.name = std::move(name);
    return l;
}

Layer Layer::resblock(std::string name, Matrix w_in, std::vector<double> b_in,
                      Matrix w_out, std::vector<double> b_out) {
    if (w_out.rows() != w_in.cols() || w_out.cols() != w_in.rows() ||
        b_in.size() != w_in.rows() || b_out.size() != w_out.rows()) {
        throw ShapeError("resblock '" + name + "': inconsistent dims");
    }
    Layer l;
    l.kind = LayerKind::resblock;
    l.name = std::move(name);
    l.w_in = std::move(w_in);
    l.b_in = std::move(b_in);
    l.w_out = std::move(w_out);
    l.b_out = std::move(b_out);
    return l;
}

const Layer& Network::layer(std::string_view name) const {
    return layers[layer_index(name)];
}

std::size_t Network::layer_index(std::string_view name) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].name == name) {
            return i;
        }
    }
    throw LookupError("unknown layer '" + std::string(name) + "'");
}

std::pair<std::size_t, std::size_t> validate_network(const Network& net) {
    if (net.layers.empty()) {
        throw ValidationError("network has no layers");
    }
    std::set<std::string> names;
    for (const Layer& l : net.layers) {
        if (!names.insert(l.name).second) {
            throw ValidationError("duplicate layer name '" + l.name + "'");
        }
    }
    std::size_t cur = 0;  // 0 = not yet pinned by a weighted layer
    std::size_t d_in = 0;
    for (const Layer& l : net.layers) {
        switch (l.kind) {
            case LayerKind::linear:
                if (cur != 0 && cur != l.weight.cols()) {
                    throw ValidationError("layer '" + l.name + "' expects dim " +
                                          std::to_string(l.weight.cols()) +
                                          ", got " + std::to_string(cur));
                }
                if (d_in == 0) {
                    d_in = l.weight.cols();
                }
                cur = l.weight.rows();
                break;
            case LayerKind::relu:
                break;
            case LayerKind::resblock:
                if (cur != 0 && cur != l.w_in.cols()) {
                    throw ValidationError("resblock '" + l.name + "' expects dim " +
                                          std::to_string(l.w_in.cols()) + ", got " +
                                          std::to_string(cur));
                }
                if (d_in == 0) {
                    d_in = l.w_in.cols();
                }
                cur = l.w_in.cols();
                break;
        }
    }
    if (d_in == 0) {
        throw ValidationError("network has no weighted layer to pin dimensions");
    }
    return {d_in, cur};
}

const LayerTap& ForwardResult::tap(std::string_view layer_name) const {
    for (const LayerTap& t : taps) {
        if (t.layer_name == layer_name) {
            return t;
        }
    }
    throw LookupError("no tap for layer '" + std::string(layer_name) + "'");
}

ForwardResult forward(const Network& net, const Batch& batch,
                      const std::vector<std::string>& tap_layers) {
    check_batch(net, batch);
    const auto tap_idx = resolve_taps(net, tap_layers);
    const Trace trace = run_forward(net, batch.inputs);

    ForwardResult result;
    for (std::size_t idx : tap_idx) {
        LayerTap tap;
        tap.layer_name = net.layers[idx].name;
        tap.x = trace.inputs[idx];
        tap.y = idx + 1 < net.layers.size() ? trace.inputs[idx + 1] : trace.output;
        result.taps.push_back(std::move(tap));
    }
    result.loss = net.loss == LossKind::mse ? mse_loss(trace.output, batch.targets)
                                            : sce_loss(trace.output, batch.targets);
    return result;
}

ForwardResult backward(const Network& net, const Batch& batch,
                       const std::vector<std::string>& tap_layers) {
    check_batch(net, batch);
    const auto tap_idx = resolve_taps(net, tap_layers);
    const Trace trace = run_forward(net, batch.inputs);

    ForwardResult result;
    result.loss = net.loss == LossKind::mse ? mse_loss(trace.output, batch.targets)
                                            : sce_loss(trace.output, batch.targets);

    Matrix gcur = net.loss == LossKind::mse ? mse_grad(trace.output, batch.targets)
                                            : sce_grad(trace.output, batch.targets);

    std::vector<Matrix> tap_grads(net.layers.size());
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const Layer& layer = net.layers[li];
        const bool tapped = std::binary_search(tap_idx.begin(), tap_idx.end(), li);
        if (tapped) {
            tap_grads[li] = gcur;
        }
        switch (layer.kind) {
            case LayerKind::linear:
                gcur = matmul(gcur, layer.weight);
                break;
            case LayerKind::relu:
                gcur = relu_backward(gcur, trace.inputs[li]);
                break;
            case LayerKind::resblock: {
                Matrix gh = relu_backward(matmul(gcur, layer.w_out), trace.res_hidden[li]);
                gcur = add(gcur, matmul(gh, layer.w_in));
                break;
            }
        }
    }

    for (std::size_t idx : tap_idx) {
        LayerTap tap;
        tap.layer_name = net.layers[idx].name;
        tap.x = trace.inputs[idx];
        tap.y = idx + 1 < net.layers.size() ? trace.inputs[idx + 1] : trace.output;
        tap.g = std::move(tap_grads[idx]);
        result.taps.push_back(std::move(tap));
    }
    return result;
}

Matrix network_outputs(const Network& net, const Matrix& inputs) {
    const auto [d_in, d_out] = validate_network(net);
    (void)d_out;
    if (inputs.cols() != d_in) {
        throw ShapeError("inputs have dim " + std::to_string(inputs.cols()) +
                         ", network expects " + std::to_string(d_in));
    }
    return run_forward(net, inputs).output;
}

Network perturb_weights(const Network& net, std::string_view layer_name,
                        const Matrix& delta) {
    const std::size_t idx = net.layer_index(layer_name);
    const Layer& target = net.layers[idx];
    if (target.kind != LayerKind::linear) {
        throw LookupError("layer '" + std::string(layer_name) + "' is not a linear layer");
    }
    if (delta.rows() != target.weight.rows() || delta.cols() != target.weight.cols()) {
        throw ShapeError("perturbation is " + std::to_string(delta.rows()) + "x" +
                         std::to_string(delta.cols()) + ", weight is " +
                         std::to_string(target.weight.rows()) + "x" +
                         std::to_string(target.weight.cols()));
    }
    Network out = net;
    Matrix& w = out.layers[idx].weight;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w.data()[i] += delta.data()[i];
    }
    return out;
}

std::vector<std::string> linear_layer_names(const Network& net) {
    std::vector<std::string> names;
    for (const Layer& l : net.layers) {
        if (l.kind == LayerKind::linear) {
            names.push_back(l.name);
        }
    }
    return names;
}

Network random_network(const std::vector<std::string>& arch, LossKind loss,
                       Rng& rng, double init_scale) {
    Network net;
    net.loss = loss;
    std::size_t index = 0;
    for (const std::string& desc : arch) {
        const auto colon = desc.find(':');
        const std::string kind = desc.substr(0, colon);
        if (kind == "relu") {
            net.layers.push_back(Layer::relu("relu" + std::to_string(index)));
        } else if (kind == "linear" || kind == "resblock") {
            if (colon == std::string::npos) {
                throw ValidationError("descriptor '" + desc + "' needs dims, e.g. linear:4x6");
            }
            const std::string dims = desc.substr(colon + 1);
            const auto x = dims.find('x');
            if (x == std::string::npos) {
                throw ValidationError("descriptor '" + desc + "' needs <a>x<b> dims");
            }
            const auto a = static_cast<std::size_t>(std::stoul(dims.substr(0, x)));
            const auto b = static_cast<std::size_t>(std::stoul(dims.substr(x + 1)));
            if (a == 0 || b == 0) {
                throw ValidationError("descriptor '" + desc + "' has zero dim");
            }
            auto draw = [&](std::size_t rows, std::size_t cols) {
                Matrix m(rows, cols);
                const double sd = init_scale / std::sqrt(static_cast<double>(cols));
                for (double& v : m.data()) {
                    v = sd * rng.gaussian();
                }
                return m;
            };
            if (kind == "linear") {
                net.layers.push_back(Layer::linear("fc" + std::to_string(index),
                                                   draw(a, b),
                                                   std::vector<double>(a, 0.0)));
            } else {
                // resblock:<d>x<hidden>
                net.layers.push_back(Layer::resblock("res" + std::to_string(index),
                                                     draw(b, a), std::vector<double>(b, 0.0),
                                                     draw(a, b), std::vector<double>(a, 0.0)));
            }
        } else {
            throw ValidationError("unknown layer descriptor '" + desc + "'");
        }
        ++index;
    }
    validate_network(net);
    return net;
}

const char* loss_name(LossKind kind) {
    return kind == LossKind::mse ? "mse" : "sce";
}

LossKind loss_from_name(std::string_view name) {
    if (name == "mse") {
        return LossKind::mse;
    }
    if (name == "sce") {
        return LossKind::softmax_cross_entropy;
    }
    throw ValidationError("unknown loss '" + std::string(name) + "'");
}

}  // namespace sensiq
