#pragma once

#include "afb/dsp.hpp"
#include "afb/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace afb {

/// How the complex part of each filter is represented.
///  - classic: real and imaginary rows are independent trainable weights.
///  - hilbert: only real rows are stored; the imaginary row is their Hilbert transform.
///  - fixed:   explicit real/imaginary rows that are never trained.
enum class Variant { classic, hilbert, fixed };

enum class InitKind { vqt, comb, random };

std::string to_string(Variant v);
std::string to_string(InitKind k);
Variant parse_variant(const std::string& s);
InitKind parse_init(const std::string& s);

struct FilterbankSpec {
    int rate = 16000;
    double f_min = 32.7;
    std::size_t n_bins = 252;
    std::size_t n_bpo = 36;
    /// Bandwidth offset in Hz; empty means derive it from the ERB rule.
    std::optional<double> gamma;
    std::size_t hop = 512;
    Variant variant = Variant::hilbert;
    InitKind init = InitKind::vqt;
    std::vector<int> harmonics{1, 2, 3, 4, 5};
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument when any invariant fails.
    void validate() const;
    /// Constant Q of the underlying geometric spacing, 1 / (2^(1/n_bpo) - 1).
    double spacing_q() const;
    double resolved_gamma() const;
};

/// Support span of the non-padded part of a row, [begin, end).
struct RowSupport {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t length() const noexcept { return end - begin; }
};

/// Learnable filter weights, zero-padded to a shared receptive field.
///
/// Rows of `real` (and `imag` when present) hold the correlation kernels
/// applied to the signal. Explicit complex rows follow the e^{-j w n}
/// kernel convention, so the analytic atom of such a row is real - j imag.
/// Hilbert-variant banks store no imaginary rows.
struct Filterbank {
    FilterbankSpec spec;
    std::vector<double> frequencies;
    std::vector<std::size_t> lengths;
    std::vector<std::size_t> offsets;
    Matrix real;
    std::optional<Matrix> imag;

    std::size_t n_bins() const noexcept { return real.rows(); }
    std::size_t receptive_field() const noexcept { return real.cols(); }
    Variant variant() const noexcept { return spec.variant; }
    RowSupport support(std::size_t mu) const { return {offsets[mu], offsets[mu] + lengths[mu]}; }
    std::vector<RowSupport> supports() const;

    /// Imaginary rows as used by the forward pass: stored rows, or the
    /// Hilbert transform of the real rows for the hilbert variant.
    Matrix effective_imag() const;

    /// Positive-frequency (analytic) complex atom of filter mu over the
    /// full receptive field.
    ComplexVector atom(std::size_t mu) const;

    /// Throws std::invalid_argument on shape, support or finiteness violations.
    void validate() const;
};

/// Row-wise discrete Hilbert transform, two rows per complex transform.
Matrix hilbert_rows(const Matrix& rows);

std::vector<double> center_frequencies(const FilterbankSpec& spec);

struct BandwidthsAndQ {
    std::vector<double> bandwidths;
    std::vector<double> q;
};

/// B_mu = f_{mu+1} - f_mu + gamma; the last bandwidth continues the final
/// geometric ratio (or `last_ratio` when only one frequency is given).
BandwidthsAndQ bandwidths_and_q(std::span<const double> freqs, double gamma,
                                std::optional<double> last_ratio = std::nullopt);

/// gamma = 24.7 / (0.108 q)
double erb_gamma(double q_constant);

/// l_mu = ceil(Q_mu * rate / f_mu)
std::vector<std::size_t> filter_lengths(std::span<const double> freqs, std::span<const double> q, double rate);

Filterbank vqt_weights(const FilterbankSpec& spec);
Filterbank comb_weights(const FilterbankSpec& spec, std::span<const int> harmonics);
Filterbank random_weights(const FilterbankSpec& spec, std::uint64_t seed);

/// Dispatch on spec.init.
Filterbank design_filterbank(const FilterbankSpec& spec);

} // namespace afb
