#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace afb {

using Complex = std::complex<double>;
using ComplexVector = std::vector<Complex>;

/// Mono audio at an integer sample rate.
struct RealSignal {
    std::vector<double> samples;
    int rate = 16000;

    /// Throws std::invalid_argument on a non-positive rate or non-finite sample.
    void validate() const;
    double duration() const { return static_cast<double>(samples.size()) / rate; }
};

/// Unnormalized forward DFT of any length >= 1 (radix-2 or Bluestein).
ComplexVector fft(std::span<const Complex> v);
/// Inverse DFT including the 1/N factor.
ComplexVector ifft(std::span<const Complex> v);
ComplexVector fft(std::span<const double> v);

/// Analytic signal whose real part is `real` and whose DFT is zero on every
/// strictly negative frequency bin. DC and (even length) Nyquist are kept.
ComplexVector analytic_completion(std::span<const double> real);

/// Imaginary part of analytic_completion, i.e. the discrete Hilbert transform.
/// The operator is antisymmetric, so it is also minus its own adjoint.
std::vector<double> hilbert_transform(std::span<const double> real);

/// Hilbert transforms of two equal-length rows sharing one complex transform.
void hilbert_transform_pair(std::span<const double> a, std::span<const double> b, std::span<double> ha,
                            std::span<double> hb);

/// Symmetric Hann window, w[n] = 0.5 - 0.5 cos(2 pi n / (L - 1)).
std::vector<double> hann_window(std::size_t length);

/// Kaiser-windowed sinc resampler (32 zero crossings each side, beta 8.6).
RealSignal resample(const RealSignal& signal, int target_rate);

/// Magnitude-weighted mean frequency over the non-negative DFT bins.
double spectral_centroid(std::span<const Complex> filter, double rate);

/// Fraction of total DFT energy found in strictly negative frequency bins.
double negative_frequency_energy(std::span<const Complex> v);

} // namespace afb
