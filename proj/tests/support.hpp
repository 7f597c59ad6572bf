#pragma once

#include "afb/dsp.hpp"
#include "afb/matrix.hpp"
#include "afb/rng.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace afb::testing {

std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0);
RealSignal random_signal(std::size_t n, std::uint64_t seed, int rate = 16000);
RealSignal sine(double freq, double seconds, int rate = 16000, double amplitude = 1.0, double phase = 0.0);

/// O(n^2) DFT, the reference for fft().
ComplexVector direct_dft(std::span<const Complex> v);

/// X[mu, k] by the literal sum over the padded signal, no shared code with strided_response.
Matrix direct_correlation(std::span<const double> x, const Matrix& w, std::size_t hop);

double max_abs_diff(const Matrix& a, const Matrix& b);

/// Per-bin coefficient of variation of a magnitude map over frames [first, last).
std::vector<double> coefficient_of_variation(const Matrix& m, std::size_t first, std::size_t last);

// Largest CV over rows whose mean envelope is within floor_db of the strongest row.
double max_cv_above(const Matrix& m, std::size_t first, std::size_t last, double floor_db);

/// Unique scratch directory under the system temp path, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace afb::testing
