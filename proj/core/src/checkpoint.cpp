#include "sensiq/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "sensiq/errors.hpp"
#include "sensiq/numfmt.hpp"

namespace sensiq {

namespace {

void append_row(std::string& out, const double* row, std::size_t count) {
    for (std::size_t j = 0; j < count; ++j) {
        if (j > 0) {
            out += ' ';
        }
        out += format_double(row[j]);
    }
    out += '\n';
}

void append_linear_block(std::string& out, const Matrix& w,
                         const std::vector<double>& bias) {
    out += "dims " + std::to_string(w.rows()) + ' ' + std::to_string(w.cols()) + '\n';
    for (std::size_t i = 0; i < w.rows(); ++i) {
        append_row(out, w.data().data() + i * w.cols(), w.cols());
    }
    out += "bias\n";
    append_row(out, bias.data(), bias.size());
}

// Line cursor that tracks 1-based numbers for error messages.
class Lines {
public:
    explicit Lines(std::string_view text) : text_(text) {}

    bool next(std::string_view& line) {
        if (pos_ >= text_.size()) {
            return false;
        }
        const auto nl = text_.find('\n', pos_);
        if (nl == std::string_view::npos) {
            line = text_.substr(pos_);
            pos_ = text_.size();
        } else {
            line = text_.substr(pos_, nl - pos_);
            pos_ = nl + 1;
        }
        ++number_;
        return true;
    }

    std::string_view expect(const char* what) {
        std::string_view line;
        if (!next(line)) {
            throw ParseError("line " + std::to_string(number_ + 1) +
                             ": unexpected end of file, expected " + what);
        }
        return line;
    }

    int number() const { return number_; }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    int number_ = 0;
};

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && line[i] == ' ') {
            ++i;
        }
        std::size_t start = i;
        while (i < line.size() && line[i] != ' ') {
            ++i;
        }
        if (i > start) {
            tokens.push_back(line.substr(start, i - start));
        }
    }
    return tokens;
}

std::vector<double> parse_number_row(Lines& lines, std::size_t expect_count,
                                     const char* what) {
    const std::string_view line = lines.expect(what);
    const auto tokens = split_ws(line);
    if (tokens.size() != expect_count) {
        throw ParseError("line " + std::to_string(lines.number()) + ": expected " +
                         std::to_string(expect_count) + " numbers, got " +
                         std::to_string(tokens.size()));
    }
    std::vector<double> values;
    values.reserve(tokens.size());
    for (const auto tok : tokens) {
        double v;
        try {
            v = parse_double(tok);
        } catch (const ParseError& e) {
            throw ParseError("line " + std::to_string(lines.number()) + ": " + e.what());
        }
        if (!std::isfinite(v)) {
            throw ParseError("line " + std::to_string(lines.number()) +
                             ": non-finite value '" + std::string(tok) + "'");
        }
        values.push_back(v);
    }
    return values;
}

// Reads `dims` + weight rows + `bias` + bias row.
std::pair<Matrix, std::vector<double>> parse_linear_block(Lines& lines) {
    const auto dims_line = lines.expect("dims line");
    const auto dims_tokens = split_ws(dims_line);
    if (dims_tokens.size() != 3 || dims_tokens[0] != "dims") {
        throw ParseError("line " + std::to_string(lines.number()) +
                         ": expected 'dims <d_out> <d_in>'");
    }
    std::size_t d_out, d_in;
    try {
        d_out = parse_u64(dims_tokens[1]);
        d_in = parse_u64(dims_tokens[2]);
    } catch (const ParseError&) {
        throw ParseError("line " + std::to_string(lines.number()) + ": invalid dims");
    }
    if (d_out == 0 || d_in == 0) {
        throw ParseError("line " + std::to_string(lines.number()) + ": zero dims");
    }
    Matrix w(d_out, d_in);
    for (std::size_t i = 0; i < d_out; ++i) {
        const auto row = parse_number_row(lines, d_in, "weight row");
        for (std::size_t j = 0; j < d_in; ++j) {
            w.at(i, j) = row[j];
        }
    }
    const auto bias_line = lines.expect("bias marker");
    if (bias_line != "bias") {
        throw ParseError("line " + std::to_string(lines.number()) + ": expected 'bias'");
    }
    auto bias = parse_number_row(lines, d_out, "bias row");
    return {std::move(w), std::move(bias)};
}

}  // namespace

std::string checkpoint_to_string(const Network& net) {
    validate_network(net);
    std::string out = "NNMODEL 1\n";
    out += std::string("loss ") + loss_name(net.loss) + '\n';
    for (const Layer& layer : net.layers) {
        switch (layer.kind) {
            case LayerKind::linear:
                out += "layer " + layer.name + " linear\n";
                append_linear_block(out, layer.weight, layer.bias);
                break;
            case LayerKind::relu:
                out += "layer " + layer.name + " relu\n";
                break;
            case LayerKind::resblock:
                out += "layer " + layer.name + " resblock\n";
                append_linear_block(out, layer.w_in, layer.b_in);
                append_linear_block(out, layer.w_out, layer.b_out);
                break;
        }
    }
    return out;
}

Network checkpoint_from_string(std::string_view text) {
    Lines lines(text);
    const auto magic = lines.expect("NNMODEL header");
    if (magic != "NNMODEL 1") {
        throw ParseError("line 1: expected 'NNMODEL 1'");
    }
    const auto loss_line = lines.expect("loss line");
    const auto loss_tokens = split_ws(loss_line);
    if (loss_tokens.size() != 2 || loss_tokens[0] != "loss") {
        throw ParseError("line 2: expected 'loss <mse|sce>'");
    }
    Network net;
    try {
        net.loss = loss_from_name(loss_tokens[1]);
    } catch (const ValidationError& e) {
        throw ParseError("line 2: " + std::string(e.what()));
    }

    std::string_view line;
    while (lines.next(line)) {
        if (line.empty()) {
            continue;
        }
        const auto tokens = split_ws(line);
        if (tokens.size() != 3 || tokens[0] != "layer") {
            throw ParseError("line " + std::to_string(lines.number()) +
                             ": expected 'layer <name> <kind>'");
        }
        const std::string name(tokens[1]);
        const std::string_view kind = tokens[2];
        if (kind == "linear") {
            auto [w, bias] = parse_linear_block(lines);
            net.layers.push_back(Layer::linear(name, std::move(w), std::move(bias)));
        } else if (kind == "relu") {
            net.layers.push_back(Layer::relu(name));
        } else if (kind == "resblock") {
            auto [w_in, b_in] = parse_linear_block(lines);
            auto [w_out, b_out] = parse_linear_block(lines);
            try {
                net.layers.push_back(Layer::resblock(name, std::move(w_in), std::move(b_in),
                                                     std::move(w_out), std::move(b_out)));
            } catch (const ShapeError& e) {
                throw ParseError("line " + std::to_string(lines.number()) + ": " +
                                 std::string(e.what()));
            }
        } else {
            throw ParseError("line " + std::to_string(lines.number()) +
                             ": unknown layer kind '" + std::string(kind) + "'");
        }
    }
    try {
        validate_network(net);
    } catch (const ValidationError& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    const std::string text = checkpoint_to_string(net);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

Network load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_string(ss.str());
}

}  // namespace sensiq
