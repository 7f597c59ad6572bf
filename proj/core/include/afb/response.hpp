#pragma once

#include "afb/design.hpp"
#include "afb/dsp.hpp"
#include "afb/matrix.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace afb {

enum class FeatureKind { magnitude, log, normalized };
enum class Mode { train, eval };

std::string to_string(FeatureKind k);
FeatureKind parse_feature_kind(const std::string& s);

/// [n_bins x n_frames] feature matrix with its framing metadata.
struct FeatureMap {
    Matrix values;
    FeatureKind kind = FeatureKind::magnitude;
    std::size_t hop = 512;
    int rate = 16000;

    std::size_t n_bins() const noexcept { return values.rows(); }
    std::size_t n_frames() const noexcept { return values.cols(); }
};

/// Natural-log stabilizer applied to magnitudes.
inline constexpr double kLogEpsilon = 1e-6;

/// floor(len / hop) + 1
std::size_t frame_count(std::size_t signal_length, std::size_t hop);

/// The signal zero-padded by floor(l_max / 2) in front and extended with
/// zeros so every frame window [k hop, k hop + l_max) is in range.
std::vector<double> pad_signal(std::span<const double> x, std::size_t hop, std::size_t l_max);

/// X[mu, k] = sum_n x_pad[k hop + n] * w[mu, n].
///
/// When `support` is given, row mu only visits its own span; weights outside
/// that span must be zero.
Matrix strided_response(std::span<const double> x, const Matrix& weights, std::size_t hop,
                        std::span<const RowSupport> support = {});

/// Adjoint of strided_response with respect to the weights:
/// dW[mu, n] = sum_k d_resp[mu, k] * x_pad[k hop + n], restricted to `support`.
Matrix strided_weight_gradient(std::span<const double> x, const Matrix& d_resp, std::size_t hop,
                               std::size_t l_max, std::span<const RowSupport> support = {});

/// Elementwise sqrt(re^2 + im^2).
Matrix l2_pool(const Matrix& re, const Matrix& im);

FeatureMap classic_magnitude(const RealSignal& x, const Filterbank& fb);
FeatureMap hilbert_magnitude(const RealSignal& x, const Filterbank& fb);

/// classic_magnitude or hilbert_magnitude, whichever matches the bank.
FeatureMap filterbank_magnitude(const RealSignal& x, const Filterbank& fb);

FeatureMap log_compress(const FeatureMap& m, double epsilon = kLogEpsilon);

/// Per-bin batch normalization parameters and running statistics.
struct BatchNormState {
    std::vector<double> scale;
    std::vector<double> shift;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.99;
    double epsilon = 1e-5;
    /// Eval mode needs running statistics from training or an explicit reset.
    bool has_running_stats = false;

    BatchNormState() = default;
    explicit BatchNormState(std::size_t n_bins);

    /// Unit scale, zero shift, running mean 0 and variance 1, marked usable.
    static BatchNormState identity(std::size_t n_bins);

    std::size_t n_bins() const noexcept { return scale.size(); }
    void validate() const;

    friend bool operator==(const BatchNormState&, const BatchNormState&) = default;
};

/// Batch statistics of one training-mode normalization.
struct BatchStats {
    std::vector<double> mean;
    std::vector<double> var;      // biased, used for normalization
    std::size_t count = 0;        // frames pooled per bin
};

/// Normalizes every map in the batch bin-wise. In train mode statistics are
/// pooled over all frames of all maps and returned through `stats`; the
/// state itself is never modified (see update_running_stats).
std::vector<FeatureMap> batch_norm(std::span<const FeatureMap> batch, const BatchNormState& state, Mode mode,
                                   BatchStats* stats = nullptr);

/// running = momentum * running + (1 - momentum) * batch (unbiased variance).
void update_running_stats(BatchNormState& state, const BatchStats& stats);

} // namespace afb
