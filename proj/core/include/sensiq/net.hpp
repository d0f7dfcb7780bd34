#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "sensiq/matrix.hpp"
#include "sensiq/rng.hpp"

namespace sensiq {

enum class LossKind { mse, softmax_cross_entropy };

enum class LayerKind { linear, relu, resblock };

// One network layer. Linear layers carry weight/bias; a resblock is the
// composite x + w_out * relu(w_in * x + b_in) + b_out with the skip applied
// at the block output. Relu carries no state.
struct Layer {
    LayerKind kind = LayerKind::relu;
    std::string name;

    Matrix weight;             // linear: d_out x d_in
    std::vector<double> bias;  // linear: d_out

    Matrix w_in;               // resblock: d_hidden x d
    std::vector<double> b_in;
    Matrix w_out;              // resblock: d x d_hidden
    std::vector<double> b_out;

    static Layer linear(std::string name, Matrix weight, std::vector<double> bias);
    static Layer relu(std::string name);
    static Layer resblock(std::string name, Matrix w_in, std::vector<double> b_in,
                          Matrix w_out, std::vector<double> b_out);

    bool operator==(const Layer&) const = default;
};

struct Network {
    std::vector<Layer> layers;
    LossKind loss = LossKind::mse;

    const Layer& layer(std::string_view name) const;  // LookupError if unknown
    std::size_t layer_index(std::string_view name) const;

    bool operator==(const Network&) const = default;
};

// Checks unique layer names and composing dimensions; ValidationError on
// failure. Returns the (input_dim, output_dim) pair.
std::pair<std::size_t, std::size_t> validate_network(const Network& net);

struct Batch {
    Matrix inputs;   // n x d_input
    Matrix targets;  // n x d_target

    bool operator==(const Batch&) const = default;
};

// Calibration record for one linear layer: inputs x (n x d_in), outputs y
// (n x d_out) and, after a backward pass, the gradient g of the mean loss
// with respect to y.
struct LayerTap {
    std::string layer_name;
    Matrix x;
    Matrix y;
    Matrix g;

    bool has_g() const { return !g.empty(); }
    std::size_t n() const { return x.rows(); }
};

struct ForwardResult {
    double loss = 0.0;
    std::vector<LayerTap> taps;  // in network layer order

    const LayerTap& tap(std::string_view layer_name) const;
};

// Runs the network on the batch. The loss is the mean over rows: for mse the
// squared Euclidean norm of (prediction - target) per row, for
// softmax-cross-entropy the negative target log-likelihood of the logits.
// Taps are filled for exactly the named linear layers (x and y only).
ForwardResult forward(const Network& net, const Batch& batch,
                      const std::vector<std::string>& tap_layers = {});

// forward plus reverse accumulation; taps additionally carry g, the gradient
// of the mean loss with respect to the tapped layer's output.
ForwardResult backward(const Network& net, const Batch& batch,
                       const std::vector<std::string>& tap_layers = {});

// Raw network outputs for an input matrix, no loss or targets involved.
Matrix network_outputs(const Network& net, const Matrix& inputs);

// Returns a copy of the network with delta added to the named linear layer's
// weight. The input network is untouched.
Network perturb_weights(const Network& net, std::string_view layer_name,
                        const Matrix& delta);

// Names of the standalone linear layers, in network order. These are the
// quantizable and tappable units.
std::vector<std::string> linear_layer_names(const Network& net);

// Builds a network from descriptors like "linear:4x6", "relu",
// "resblock:6x3" (width 6, hidden 3). Weights are drawn from the rng as
// N(0, init_scale/sqrt(d_in)) in a fixed order; biases are zero.
Network random_network(const std::vector<std::string>& arch, LossKind loss,
                       Rng& rng, double init_scale = 1.0);

const char* loss_name(LossKind kind);
LossKind loss_from_name(std::string_view name);

}  // namespace sensiq
