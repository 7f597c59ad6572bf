#include "afb/dsp.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

using namespace afb;
using afb::testing::direct_dft;

namespace {

constexpr double kPi = std::numbers::pi;

double energy(std::span<const Complex> v)
{
    double e = 0.0;
    for (const auto& c : v)
        e += std::norm(c);
    return e;
}

ComplexVector random_complex(std::size_t n, Rng& rng)
{
    ComplexVector v(n);
    for (auto& c : v)
        c = {rng.normal(), rng.normal()};
    return v;
}

} // namespace

TEST(Fft, ImpulseIsFlat)
{
    ComplexVector v{1.0, 0.0, 0.0, 0.0};
    for (const auto& c : fft(v))
        EXPECT_NEAR(std::abs(c - Complex{1.0, 0.0}), 0.0, 1e-15);
}

TEST(Fft, ConstantConcentratesAtDc)
{
    ComplexVector v(4, Complex{1.0, 0.0});
    auto s = fft(v);
    EXPECT_NEAR(std::abs(s[0] - Complex{4.0, 0.0}), 0.0, 1e-15);
    for (std::size_t k = 1; k < 4; ++k)
        EXPECT_NEAR(std::abs(s[k]), 0.0, 1e-15);
}

TEST(Fft, MatchesDirectDft)
{
    Rng rng(3);
    for (std::size_t n : {128u, 1u, 2u, 3u, 7u, 100u, 127u, 243u}) {
        auto v = random_complex(n, rng);
        auto fast = fft(v);
        auto ref = direct_dft(v);
        double worst = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            worst = std::max(worst, std::abs(fast[k] - ref[k]));
        EXPECT_LT(worst, 1e-10) << "n=" << n;
    }
}

TEST(Fft, RoundTripEveryLengthUpTo1024)
{
    Rng rng(11);
    for (std::size_t n = 1; n <= 1024; ++n) {
        auto v = random_complex(n, rng);
        auto back = ifft(fft(v));
        double diff = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            diff += std::norm(back[i] - v[i]);
        ASSERT_LT(std::sqrt(diff / energy(v)), 1e-12) << "n=" << n;
    }
}

TEST(Fft, Parseval)
{
    Rng rng(5);
    for (std::size_t n : {16u, 97u, 1000u, 3149u}) {
        auto v = random_complex(n, rng);
        const double time = energy(v);
        const double freq = energy(fft(v)) / static_cast<double>(n);
        EXPECT_NEAR(freq / time, 1.0, 1e-10);
    }
}

TEST(Fft, RealOverloadMatchesComplex)
{
    Rng rng(8);
    auto x = afb::testing::random_vector(45, rng);
    ComplexVector c(x.begin(), x.end());
    auto a = fft(std::span<const double>(x));
    auto b = fft(c);
    for (std::size_t k = 0; k < x.size(); ++k)
        EXPECT_EQ(a[k], b[k]);
}

TEST(Fft, EmptyInputThrows)
{
    ComplexVector v;
    EXPECT_THROW(fft(v), std::invalid_argument);
}

TEST(AnalyticCompletion, CosineBecomesComplexExponential)
{
    std::vector<double> x(64);
    for (std::size_t n = 0; n < 64; ++n)
        x[n] = std::cos(2.0 * kPi * 8.0 * static_cast<double>(n) / 64.0);
    auto a = analytic_completion(x);
    for (std::size_t n = 0; n < 64; ++n) {
        EXPECT_NEAR(a[n].real(), x[n], 1e-12);
        EXPECT_NEAR(a[n].imag(), std::sin(2.0 * kPi * 8.0 * static_cast<double>(n) / 64.0), 1e-10);
    }
}

TEST(AnalyticCompletion, ZerosStayZero)
{
    std::vector<double> x(17, 0.0);
    for (const auto& c : analytic_completion(x))
        EXPECT_EQ(c, Complex(0.0, 0.0));
}

TEST(AnalyticCompletion, NegativeBinsVanish)
{
    Rng rng(2);
    auto x = afb::testing::random_vector(100, rng);
    auto spectrum = fft(analytic_completion(x));
    for (std::size_t k = 51; k < 100; ++k)
        EXPECT_LE(std::abs(spectrum[k]), 1e-12);
}

TEST(AnalyticCompletion, InvariantsAcrossLengths)
{
    Rng rng(4);
    for (std::size_t n = 2; n <= 300; n += (n < 20 ? 1 : 37)) {
        auto x = afb::testing::random_vector(n, rng);
        auto a = analytic_completion(x);
        for (std::size_t i = 0; i < n; ++i)
            ASSERT_NEAR(a[i].real(), x[i], 1e-12);
        EXPECT_LE(negative_frequency_energy(a), 1e-12) << "n=" << n;
    }
}

TEST(AnalyticCompletion, TooShortThrows)
{
    std::vector<double> x{1.0};
    EXPECT_THROW(analytic_completion(x), std::invalid_argument);
}

TEST(HilbertTransform, IsAntisymmetricOperator)
{
    // <H a, b> = -<a, H b>; the backward pass relies on this.
    Rng rng(9);
    for (std::size_t n : {8u, 9u, 64u, 101u}) {
        auto a = afb::testing::random_vector(n, rng);
        auto b = afb::testing::random_vector(n, rng);
        auto ha = hilbert_transform(a);
        auto hb = hilbert_transform(b);
        const double lhs = std::inner_product(ha.begin(), ha.end(), b.begin(), 0.0);
        const double rhs = std::inner_product(a.begin(), a.end(), hb.begin(), 0.0);
        EXPECT_NEAR(lhs, -rhs, 1e-10);
    }
}

TEST(HilbertTransform, PairMatchesSingleRows)
{
    Rng rng(12);
    for (std::size_t n : {2u, 3u, 16u, 17u, 250u, 1024u, 1531u}) {
        const auto a = afb::testing::random_vector(n, rng);
        const auto b = afb::testing::random_vector(n, rng);
        std::vector<double> ha(n), hb(n);
        hilbert_transform_pair(a, b, ha, hb);
        const auto ra = hilbert_transform(a);
        const auto rb = hilbert_transform(b);
        for (std::size_t i = 0; i < n; ++i) {
            ASSERT_NEAR(ha[i], ra[i], 1e-12) << n;
            ASSERT_NEAR(hb[i], rb[i], 1e-12) << n;
        }
    }
    std::vector<double> x(4), y(5), hx(4), hy(5);
    EXPECT_THROW(hilbert_transform_pair(x, y, hx, hy), std::invalid_argument);
}

TEST(HannWindow, SmallLengths)
{
    EXPECT_EQ(hann_window(1), std::vector<double>{1.0});
    auto w3 = hann_window(3);
    EXPECT_NEAR(w3[0], 0.0, 1e-15);
    EXPECT_NEAR(w3[1], 1.0, 1e-15);
    EXPECT_NEAR(w3[2], 0.0, 1e-15);
    const double expected[] = {0.0, 0.5, 1.0, 0.5, 0.0};
    auto w5 = hann_window(5);
    for (std::size_t i = 0; i < 5; ++i)
        EXPECT_NEAR(w5[i], expected[i], 1e-15);
    EXPECT_THROW(hann_window(0), std::invalid_argument);
}

TEST(HannWindow, Symmetric)
{
    for (std::size_t len : {2u, 10u, 11u, 3149u}) {
        auto w = hann_window(len);
        for (std::size_t n = 0; n < len; ++n)
            ASSERT_EQ(w[n], w[len - 1 - n]);
    }
}

TEST(Resample, SameRateIsIdentity)
{
    auto s = afb::testing::random_signal(1000, 1);
    auto r = resample(s, 16000);
    EXPECT_EQ(r.samples, s.samples);
    EXPECT_EQ(r.rate, 16000);
}

TEST(Resample, SineAt48kMatchesIdealSine)
{
    auto s = afb::testing::sine(1000.0, 1.0, 48000);
    auto r = resample(s, 16000);
    auto ideal = afb::testing::sine(1000.0, 1.0, 16000);
    ASSERT_EQ(r.samples.size(), ideal.samples.size());
    // Skip the filter's edge transients.
    const std::size_t edge = 64;
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t n = edge; n + edge < ideal.samples.size(); ++n) {
        xy += r.samples[n] * ideal.samples[n];
        xx += r.samples[n] * r.samples[n];
        yy += ideal.samples[n] * ideal.samples[n];
    }
    EXPECT_GT(xy / std::sqrt(xx * yy), 0.999);
}

TEST(Resample, LengthArithmetic)
{
    RealSignal s{std::vector<double>(441000, 0.0), 44100};
    auto r = resample(s, 16000);
    EXPECT_NEAR(static_cast<double>(r.samples.size()), 160000.0, 1.0);
    EXPECT_THROW(resample(s, 0), std::invalid_argument);
}

TEST(Resample, AliasesSuppressed)
{
    // 1 kHz in band plus 11 kHz above the new Nyquist, which would fold to 5 kHz.
    auto a = afb::testing::sine(1000.0, 1.0, 48000);
    auto b = afb::testing::sine(11000.0, 1.0, 48000);
    for (std::size_t n = 0; n < a.samples.size(); ++n)
        a.samples[n] += b.samples[n];
    auto r = resample(a, 16000);
    std::vector<double> mid(r.samples.begin() + 2000, r.samples.begin() + 2000 + 8000);
    auto w = hann_window(mid.size());
    for (std::size_t n = 0; n < mid.size(); ++n)
        mid[n] *= w[n];
    auto spec = fft(std::span<const double>(mid));
    // 8000 points at 16 kHz: 2 Hz bins.
    const double tone = std::abs(spec[500]);
    double alias = 0.0;
    for (std::size_t k = 2400; k <= 2600; ++k)
        alias = std::max(alias, std::abs(spec[k]));
    EXPECT_LT(20.0 * std::log10(alias / tone), -60.0);
}

TEST(SpectralCentroid, SingleLine)
{
    const std::size_t len = 1600;
    ComplexVector v(len);
    for (std::size_t n = 0; n < len; ++n)
        v[n] = std::polar(1.0, 2.0 * kPi * 440.0 * static_cast<double>(n) / 16000.0);
    EXPECT_NEAR(spectral_centroid(v, 16000.0), 440.0, 16000.0 / len);
}

TEST(SpectralCentroid, AllZeroIsZero)
{
    ComplexVector v(64, Complex{0.0, 0.0});
    EXPECT_EQ(spectral_centroid(v, 16000.0), 0.0);
}

TEST(SpectralCentroid, TwoEqualLines)
{
    const std::size_t len = 1600;
    ComplexVector v(len);
    for (std::size_t n = 0; n < len; ++n) {
        const double t = static_cast<double>(n) / 16000.0;
        v[n] = std::polar(1.0, 2.0 * kPi * 100.0 * t) + std::polar(1.0, 2.0 * kPi * 300.0 * t);
    }
    EXPECT_NEAR(spectral_centroid(v, 16000.0), 200.0, 16000.0 / len);
}

TEST(RealSignal, ValidateRejectsBadInput)
{
    RealSignal s{{0.0, std::nan("")}, 16000};
    EXPECT_THROW(s.validate(), std::invalid_argument);
    RealSignal t{{0.0}, 0};
    EXPECT_THROW(t.validate(), std::invalid_argument);
}
