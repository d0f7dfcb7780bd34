#include "sensiq/calib.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "sensiq/errors.hpp"
#include "sensiq/numfmt.hpp"

namespace sensiq {

namespace {

std::vector<double> resolve(const std::vector<double>& v, std::size_t dim,
                            double fill, const char* what) {
    if (v.empty()) {
        return std::vector<double>(dim, fill);
    }
    if (v.size() != dim) {
        throw ValidationError(std::string(what) + " has length " +
                              std::to_string(v.size()) + ", expected " +
                              std::to_string(dim));
    }
    return v;
}

void check_scales(const std::vector<double>& scale, const char* what) {
    for (double s : scale) {
        if (!(s > 0.0)) {
            throw ValidationError(std::string(what) + " entries must be > 0, got " +
                                  format_double(s));
        }
    }
}

}  // namespace

void validate_dist(const DistSpec& dist) {
    if (dist.dim == 0) {
        throw ValidationError("distribution dim must be >= 1");
    }
    resolve(dist.mean, dist.dim, 0.0, "mean");
    check_scales(resolve(dist.scale, dist.dim, 1.0, "scale"), "scale");
    switch (dist.kind) {
        case DistKind::gaussian:
            break;
        case DistKind::heavy_tailed:
            if (!(dist.tail_exponent > 0.0)) {
                throw ValidationError("tail_exponent must be > 0, got " +
                                      format_double(dist.tail_exponent));
            }
            break;
        case DistKind::mixture: {
            if (dist.mixture_weights.empty()) {
                throw ValidationError("mixture needs at least one component");
            }
            if (dist.mixture_means.size() != dist.mixture_weights.size() ||
                dist.mixture_scales.size() != dist.mixture_weights.size()) {
                throw ValidationError("mixture component counts disagree");
            }
            double total = 0.0;
            for (double w : dist.mixture_weights) {
                if (!(w >= 0.0)) {
                    throw ValidationError("mixture weights must be >= 0");
                }
                total += w;
            }
            if (std::fabs(total - 1.0) > 1e-12) {
                throw ValidationError("mixture weights sum to " + format_double(total) +
                                      ", expected 1 within 1e-12");
            }
            for (std::size_t c = 0; c < dist.mixture_weights.size(); ++c) {
                resolve(dist.mixture_means[c], dist.dim, 0.0, "mixture mean");
                check_scales(resolve(dist.mixture_scales[c], dist.dim, 1.0,
                                     "mixture scale"),
                             "mixture scale");
            }
            break;
        }
        case DistKind::shifted_gaussian:
            resolve(dist.shift, dist.dim, 0.0, "shift");
            break;
    }
}

Batch sample(const DistSpec& dist, const TaskSpec& task, std::size_t n) {
    if (n == 0) {
        throw ValidationError("sample: n must be >= 1");
    }
    validate_dist(dist);
    const auto [teacher_in, teacher_out] = validate_network(task.teacher);
    if (teacher_in != dist.dim) {
        throw ValidationError("teacher expects dim " + std::to_string(teacher_in) +
                              ", distribution has dim " + std::to_string(dist.dim));
    }
    if (task.noise_scale < 0.0) {
        throw ValidationError("noise_scale must be >= 0");
    }

    const auto mean = resolve(dist.mean, dist.dim, 0.0, "mean");
    const auto scale = resolve(dist.scale, dist.dim, 1.0, "scale");

    Rng rng(dist.seed);
    Matrix inputs(n, dist.dim);
    switch (dist.kind) {
        case DistKind::gaussian:
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < dist.dim; ++j) {
                    inputs.at(i, j) = mean[j] + scale[j] * rng.gaussian();
                }
            }
            break;
        case DistKind::heavy_tailed:
            // Student-t as gaussian over sqrt(chi-square/dof), entrywise.
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < dist.dim; ++j) {
                    const double z = rng.gaussian();
                    const double c = rng.chi_square(dist.tail_exponent);
                    inputs.at(i, j) =
                        mean[j] + scale[j] * z / std::sqrt(c / dist.tail_exponent);
                }
            }
            break;
        case DistKind::mixture:
            for (std::size_t i = 0; i < n; ++i) {
                const double u = rng.uniform();
                std::size_t comp = dist.mixture_weights.size() - 1;
                double cum = 0.0;
                for (std::size_t c = 0; c < dist.mixture_weights.size(); ++c) {
                    cum += dist.mixture_weights[c];
                    if (u < cum) {
                        comp = c;
                        break;
                    }
                }
                const auto cmean =
                    resolve(dist.mixture_means[comp], dist.dim, 0.0, "mixture mean");
                const auto cscale =
                    resolve(dist.mixture_scales[comp], dist.dim, 1.0, "mixture scale");
                for (std::size_t j = 0; j < dist.dim; ++j) {
                    inputs.at(i, j) = cmean[j] + cscale[j] * rng.gaussian();
                }
            }
            break;
        case DistKind::shifted_gaussian: {
            const auto shift = resolve(dist.shift, dist.dim, 0.0, "shift");
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < dist.dim; ++j) {
                    inputs.at(i, j) = mean[j] + shift[j] + scale[j] * rng.gaussian();
                }
            }
            break;
        }
    }

    Matrix outputs = network_outputs(task.teacher, inputs);

    if (task.noise_scale > 0.0) {
        for (std::size_t i = 0; i < outputs.rows(); ++i) {
            for (std::size_t j = 0; j < outputs.cols(); ++j) {
                outputs.at(i, j) += task.noise_scale * rng.gaussian();
            }
        }
    }

    Matrix targets;
    if (task.teacher.loss == LossKind::softmax_cross_entropy) {
        targets = Matrix(n, teacher_out);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < teacher_out; ++j) {
                if (outputs.at(i, j) > outputs.at(i, best)) {
                    best = j;
                }
            }
            targets.at(i, best) = 1.0;
        }
    } else {
        targets = std::move(outputs);
    }
    return Batch{std::move(inputs), std::move(targets)};
}

DistSpec shift_dist(const DistSpec& dist, const std::vector<double>& delta,
                    const std::vector<double>& scale_mult) {
    validate_dist(dist);
    if (delta.size() != dist.dim || scale_mult.size() != dist.dim) {
        throw ShapeError("shift: delta/scale_mult must have length " +
                         std::to_string(dist.dim));
    }
    DistSpec out = dist;
    out.mean = resolve(dist.mean, dist.dim, 0.0, "mean");
    out.scale = resolve(dist.scale, dist.dim, 1.0, "scale");
    for (std::size_t j = 0; j < dist.dim; ++j) {
        out.mean[j] += delta[j];
        out.scale[j] *= scale_mult[j];
        if (!(out.scale[j] > 0.0)) {
            throw ValidationError("shift: resulting scale[" + std::to_string(j) +
                                  "] = " + format_double(out.scale[j]) +
                                  " is not positive");
        }
    }
    if (dist.kind == DistKind::mixture) {
        for (std::size_t c = 0; c < out.mixture_weights.size(); ++c) {
            auto cmean = resolve(dist.mixture_means[c], dist.dim, 0.0, "mixture mean");
            auto cscale =
                resolve(dist.mixture_scales[c], dist.dim, 1.0, "mixture scale");
            for (std::size_t j = 0; j < dist.dim; ++j) {
                cmean[j] += delta[j];
                cscale[j] *= scale_mult[j];
                if (!(cscale[j] > 0.0)) {
                    throw ValidationError("shift: mixture scale not positive");
                }
            }
            out.mixture_means[c] = std::move(cmean);
            out.mixture_scales[c] = std::move(cscale);
        }
    }
    // 'spec compares equal' for the identity shift requires canonical
    // mean/scale on both sides.
    DistSpec canon = dist;
    canon.mean = resolve(dist.mean, dist.dim, 0.0, "mean");
    canon.scale = resolve(dist.scale, dist.dim, 1.0, "scale");
    if (dist.kind == DistKind::mixture) {
        for (std::size_t c = 0; c < canon.mixture_weights.size(); ++c) {
            canon.mixture_means[c] =
                resolve(dist.mixture_means[c], dist.dim, 0.0, "mixture mean");
            canon.mixture_scales[c] =
                resolve(dist.mixture_scales[c], dist.dim, 1.0, "mixture scale");
        }
    }
    bool identity = true;
    for (std::size_t j = 0; j < dist.dim; ++j) {
        identity = identity && delta[j] == 0.0 && scale_mult[j] == 1.0;
    }
    return identity ? canon : out;
}

std::string batch_to_csv(const Batch& batch) {
    if (batch.inputs.rows() != batch.targets.rows()) {
        throw ShapeError("batch rows disagree");
    }
    std::string out = "# dims " + std::to_string(batch.inputs.cols()) + ' ' +
                      std::to_string(batch.targets.cols()) + '\n';
    for (std::size_t i = 0; i < batch.inputs.rows(); ++i) {
        for (std::size_t j = 0; j < batch.inputs.cols(); ++j) {
            if (j > 0) {
                out += ',';
            }
            out += format_double(batch.inputs.at(i, j));
        }
        for (std::size_t j = 0; j < batch.targets.cols(); ++j) {
            out += ',';
            out += format_double(batch.targets.at(i, j));
        }
        out += '\n';
    }
    return out;
}

Batch batch_from_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError("row 0: empty file");
    }
    std::size_t d_input = 0, d_target = 0;
    {
        std::istringstream header(line);
        std::string hash, dims;
        if (!(header >> hash >> dims) || hash != "#" || dims != "dims" ||
            !(header >> d_input >> d_target) || d_input == 0) {
            throw ParseError("row 0: expected '# dims <d_input> <d_target>'");
        }
    }
    std::vector<double> input_values;
    std::vector<double> target_values;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        ++rows;
        std::vector<std::string_view> cells;
        std::string_view sv = line;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= sv.size(); ++i) {
            if (i == sv.size() || sv[i] == ',') {
                cells.push_back(sv.substr(start, i - start));
                start = i + 1;
            }
        }
        if (cells.size() != d_input + d_target) {
            throw ParseError("row " + std::to_string(rows) + ": expected " +
                             std::to_string(d_input + d_target) + " cells, got " +
                             std::to_string(cells.size()));
        }
        for (std::size_t j = 0; j < cells.size(); ++j) {
            double v;
            try {
                v = parse_double(cells[j]);
            } catch (const ParseError& e) {
                throw ParseError("row " + std::to_string(rows) + ": " + e.what());
            }
            (j < d_input ? input_values : target_values).push_back(v);
        }
    }
    if (rows == 0) {
        throw ParseError("row 0: no data rows");
    }
    return Batch{Matrix(rows, d_input, std::move(input_values)),
                 Matrix(rows, d_target, std::move(target_values))};
}

void save_csv(const Batch& batch, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    const std::string text = batch_to_csv(batch);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

Batch load_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return batch_from_csv(ss.str());
}

const char* dist_name(DistKind kind) {
    switch (kind) {
        case DistKind::gaussian: return "gaussian";
        case DistKind::heavy_tailed: return "heavy-tailed";
        case DistKind::mixture: return "mixture";
        case DistKind::shifted_gaussian: return "shifted-gaussian";
    }
    return "gaussian";
}

DistKind dist_from_name(std::string_view name) {
    if (name == "gaussian") return DistKind::gaussian;
    if (name == "heavy-tailed") return DistKind::heavy_tailed;
    if (name == "mixture") return DistKind::mixture;
    if (name == "shifted-gaussian") return DistKind::shifted_gaussian;
    throw ValidationError("unknown distribution '" + std::string(name) + "'");
}

}  // namespace sensiq
