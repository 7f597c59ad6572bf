#pragma once

#include "afb/design.hpp"
#include "afb/dropout.hpp"
#include "afb/response.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace afb {

enum class DropoutKind { none, bernoulli, gaussian, variational };

std::string to_string(DropoutKind k);
DropoutKind parse_dropout(const std::string& s);

struct DropoutSettings {
    DropoutKind kind = DropoutKind::none;
    double bernoulli_rate = 0.1;
    double gaussian_log_var = -10.0;
    /// Required when kind == variational.
    const VarDropoutState* variational = nullptr;
    /// Root of the per-call noise streams; the same seed redraws the same noise.
    std::uint64_t seed = 0;
};

/// Intermediates of one frontend_forward call, consumed by frontend_backward.
struct FrontendTape {
    struct Item {
        std::vector<double> signal;
        Matrix re, im;          // responses after noise
        Matrix magnitude;
        Matrix normalized_in;   // x_hat of the batch norm
        std::optional<Matrix> noise_re, sd_re, noise_im, sd_im;
    };

    Variant variant = Variant::hilbert;
    DropoutKind dropout = DropoutKind::none;
    Mode mode = Mode::eval;
    std::size_t hop = 512;
    std::size_t l_max = 0;
    std::vector<RowSupport> support;
    Matrix eff_real, eff_imag;                    // weights actually applied
    std::optional<Matrix> drop_scale_re, drop_scale_im;
    std::optional<Matrix> sigma2_re, sigma2_im;   // variational only
    std::vector<double> bn_scale;
    std::vector<double> inv_std;
    BatchStats batch_stats;
    std::vector<Item> items;
};

struct ForwardResult {
    std::vector<FeatureMap> features;
    FrontendTape tape;
};

/// Filterbank response, L2 pooling, log compression and batch normalization
/// for a batch of signals. Dropout noise is only applied in train mode.
ForwardResult frontend_forward(std::span<const RealSignal> batch, const Filterbank& fb, const BatchNormState& bn,
                               const DropoutSettings& dropout, Mode mode);

struct FrontendGradients {
    Matrix d_real;
    std::optional<Matrix> d_imag;  // classic and fixed variants
    std::vector<double> d_bn_scale;
    std::vector<double> d_bn_shift;
    std::optional<Matrix> d_log_var;
    std::optional<Matrix> d_log_var_imag;
};

/// Exact reverse pass. `d_out` holds one [n_bins x n_frames] gradient per
/// batch item. Weight gradients are confined to each filter's support.
FrontendGradients frontend_backward(const FrontendTape& tape, std::span<const Matrix> d_out);

} // namespace afb
