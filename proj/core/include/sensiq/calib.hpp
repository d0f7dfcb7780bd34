#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sensiq/net.hpp"

namespace sensiq {

enum class DistKind { gaussian, heavy_tailed, mixture, shifted_gaussian };

// Input distribution for calibration/evaluation batches. heavy_tailed draws
// Student-t entries (tail_exponent = degrees of freedom); mixture picks a
// gaussian component per sample; shifted_gaussian adds a fixed offset on top
// of the base mean, which is how deployment-shift experiments are phrased.
struct DistSpec {
    DistKind kind = DistKind::gaussian;
    std::size_t dim = 0;
    std::vector<double> mean;       // per-dim; empty = zeros
    std::vector<double> scale;      // per-dim; empty = ones
    double tail_exponent = 4.0;     // heavy_tailed only
    std::vector<double> mixture_weights;
    std::vector<std::vector<double>> mixture_means;   // one vector per component
    std::vector<std::vector<double>> mixture_scales;
    std::vector<double> shift;      // shifted_gaussian only
    std::uint64_t seed = 0;

    bool operator==(const DistSpec&) const = default;
};

void validate_dist(const DistSpec& dist);

// Supplies ground truth: targets = teacher(inputs) + gaussian noise. For a
// softmax-cross-entropy teacher the targets are one-hot argmax of the
// (noised) teacher logits.
struct TaskSpec {
    Network teacher;
    double noise_scale = 0.0;
};

// Deterministic in (dist, task, n): the sample stream is a pure function of
// dist.seed. Disjoint roles should carry seeds derived via derive_seed.
Batch sample(const DistSpec& dist, const TaskSpec& task, std::size_t n);

// New spec with mean shifted by delta and scales multiplied entrywise.
// Kind and seed are preserved. ValidationError if a resulting scale is not
// positive.
DistSpec shift_dist(const DistSpec& dist, const std::vector<double>& delta,
                    const std::vector<double>& scale_mult);

// CSV with a '# dims <d_input> <d_target>' header line, one sample per line,
// inputs then targets. Round-trips exact values.
std::string batch_to_csv(const Batch& batch);
Batch batch_from_csv(std::string_view text);

void save_csv(const Batch& batch, const std::filesystem::path& path);
Batch load_csv(const std::filesystem::path& path);

const char* dist_name(DistKind kind);
DistKind dist_from_name(std::string_view name);

}  // namespace sensiq
