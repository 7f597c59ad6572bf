#pragma once

#include "afb/design.hpp"
#include "afb/matrix.hpp"
#include "afb/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>

namespace afb {

/// Learned per-weight log variances for variational dropout.
///
/// `log_var` mirrors the real weight rows; `log_var_imag` exists only for
/// the classic variant, whose imaginary rows are trainable too.
struct VarDropoutState {
    Matrix log_var;
    std::optional<Matrix> log_var_imag;
    double kl_scale = 0.01;
    std::uint64_t rng_seed = 0;

    /// All log variances set to `init` over the bank's shape.
    static VarDropoutState for_bank(const Filterbank& fb, double init = -10.0, double kl_scale = 0.01,
                                    std::uint64_t seed = 0);

    void validate_against(const Filterbank& fb) const;
};

/// Response-space sample of N(mean, x^2 * sigma^2).
struct NoisySample {
    Matrix value;    // mean + std_dev * noise
    Matrix noise;    // standard normal draws
    Matrix std_dev;  // sqrt(max(variance, 0))
};

/// Local reparameterization: the variance map is strided_response(x^2, exp(log_var)).
NoisySample noisy_response(const Matrix& mean_resp, std::span<const double> x, const Matrix& log_var,
                           std::size_t hop, std::span<const RowSupport> support, Rng& rng);

/// Same draw with a fixed scalar log variance on every supported weight.
NoisySample gaussian_dropout_response(const Matrix& mean_resp, std::span<const double> x, double fixed_log_var,
                                      std::size_t hop, std::size_t l_max, std::span<const RowSupport> support,
                                      Rng& rng);

/// Approximate KL divergence of the log-uniform prior, scaled and summed.
struct KlResult {
    double value = 0.0;
    Matrix d_weights;
    Matrix d_log_var;
};

inline constexpr double kKlK1 = 0.63576;
inline constexpr double kKlK2 = 1.87320;
inline constexpr double kKlK3 = 1.48695;
inline constexpr double kAlphaFloor = 1e-12;

/// log alpha = log_var - ln(w^2 + 1e-12)
double log_alpha(double weight, double log_var);

/// Unscaled per-weight penalty, -(k1 sigmoid(k2 + k3 log a) - 0.5 ln(1 + 1/a) - k1).
double kl_term(double log_alpha);
/// d kl_term / d log_alpha
double kl_term_derivative(double log_alpha);

KlResult kl_penalty(const Matrix& weights, const Matrix& log_var, double kl_scale);
/// Restricted to each row's support; entries outside it get zero gradient.
KlResult kl_penalty(const Matrix& weights, const Matrix& log_var, double kl_scale,
                    std::span<const RowSupport> support);

struct BernoulliMask {
    Matrix weights;  // masked and rescaled
    Matrix scale;    // 0 for dropped entries, 1/(1-rate) for survivors
};

/// Inverted dropout on weights; a rate of 0 returns the input unchanged.
BernoulliMask bernoulli_dropout(const Matrix& weights, double rate, Rng& rng);

struct PruneMask {
    std::vector<std::uint8_t> keep;
    std::optional<std::vector<std::uint8_t>> keep_imag;
    double threshold_log_alpha = 3.0;
};

struct PruneResult {
    Filterbank bank;
    PruneMask mask;
    double sparsity = 0.0;  // zeroed fraction of supported weights
};

/// Zeroes every supported weight whose log alpha exceeds the threshold.
PruneResult prune(const Filterbank& fb, const VarDropoutState& state, double threshold_log_alpha = 3.0);

/// Fraction of supported weights with log alpha above the threshold.
double prunable_fraction(const Filterbank& fb, const VarDropoutState& state, double threshold_log_alpha = 3.0);

/// Per-filter prunable fraction (real and, if present, imaginary rows).
std::vector<double> prunable_fraction_per_filter(const Filterbank& fb, const VarDropoutState& state,
                                                 double threshold_log_alpha = 3.0);

} // namespace afb
