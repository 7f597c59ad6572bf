#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unistd.h>

namespace afb::testing {

std::vector<double> random_vector(std::size_t n, Rng& rng, double scale)
{
    std::vector<double> v(n);
    for (double& x : v)
        x = scale * rng.normal();
    return v;
}

RealSignal random_signal(std::size_t n, std::uint64_t seed, int rate)
{
    Rng rng(seed);
    return {random_vector(n, rng), rate};
}

RealSignal sine(double freq, double seconds, int rate, double amplitude, double phase)
{
    RealSignal s;
    s.rate = rate;
    s.samples.resize(static_cast<std::size_t>(std::llround(seconds * rate)));
    for (std::size_t n = 0; n < s.samples.size(); ++n)
        s.samples[n] = amplitude * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(n) / rate + phase);
    return s;
}

ComplexVector direct_dft(std::span<const Complex> v)
{
    const std::size_t n = v.size();
    ComplexVector out(n);
    for (std::size_t k = 0; k < n; ++k) {
        Complex acc{0.0, 0.0};
        for (std::size_t t = 0; t < n; ++t) {
            const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
            acc += v[t] * Complex{std::cos(angle), std::sin(angle)};
        }
        out[k] = acc;
    }
    return out;
}

Matrix direct_correlation(std::span<const double> x, const Matrix& w, std::size_t hop)
{
    const std::size_t l_max = w.cols();
    const std::size_t frames = x.size() / hop + 1;
    const auto pad = static_cast<std::ptrdiff_t>(l_max / 2);
    Matrix out(w.rows(), frames);
    for (std::size_t mu = 0; mu < w.rows(); ++mu) {
        for (std::size_t k = 0; k < frames; ++k) {
            double acc = 0.0;
            for (std::size_t n = 0; n < l_max; ++n) {
                const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(k * hop + n) - pad;
                if (t >= 0 && t < static_cast<std::ptrdiff_t>(x.size()))
                    acc += x[static_cast<std::size_t>(t)] * w(mu, n);
            }
            out(mu, k) = acc;
        }
    }
    return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.flat()[i] - b.flat()[i]));
    return m;
}

std::vector<double> coefficient_of_variation(const Matrix& m, std::size_t first, std::size_t last)
{
    std::vector<double> cv(m.rows());
    const double count = static_cast<double>(last - first);
    for (std::size_t mu = 0; mu < m.rows(); ++mu) {
        double mean = 0.0;
        for (std::size_t k = first; k < last; ++k)
            mean += m(mu, k);
        mean /= count;
        double var = 0.0;
        for (std::size_t k = first; k < last; ++k)
            var += (m(mu, k) - mean) * (m(mu, k) - mean);
        var /= count;
        cv[mu] = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
    }
    return cv;
}

double max_cv_above(const Matrix& m, std::size_t first, std::size_t last, double floor_db)
{
    if (last <= first)
        throw std::invalid_argument("max_cv_above: no interior frames");
    const auto cv = coefficient_of_variation(m, first, last);
    std::vector<double> mean(m.rows(), 0.0);
    for (std::size_t mu = 0; mu < m.rows(); ++mu)
        for (std::size_t k = first; k < last; ++k)
            mean[mu] += m(mu, k);
    const double peak = *std::max_element(mean.begin(), mean.end());
    const double floor = peak * std::pow(10.0, floor_db / 20.0);
    double worst = 0.0;
    for (std::size_t mu = 0; mu < m.rows(); ++mu)
        if (mean[mu] >= floor)
            worst = std::max(worst, cv[mu]);
    return worst;
}

TempDir::TempDir()
{
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("afb_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir()
{
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

} // namespace afb::testing
