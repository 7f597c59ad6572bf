#include "afb/dsp.hpp"

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace afb {

namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Twiddles and bit-reversal order for one power-of-two size and direction.
struct Radix2Plan {
    std::vector<std::size_t> swaps;  // (i, j) pairs, flattened
    std::vector<Complex> twiddle;
};

// Chirp and transformed kernel for one Bluestein length and direction.
struct BluesteinPlan {
    std::size_t m = 0;
    std::vector<Complex> chirp;
    std::vector<Complex> kernel;
};

template <class Plan>
class PlanCache {
public:
    template <class Make>
    const Plan& get(std::size_t n, int sign, Make make)
    {
        const std::uint64_t key = (static_cast<std::uint64_t>(n) << 1) | (sign > 0 ? 1u : 0u);
        auto it = plans_.find(key);
        if (it == plans_.end()) {
            if (plans_.size() >= kMaxPlans) {
                plans_.clear();
            }
            it = plans_.emplace(key, make()).first;
        }
        return it->second;
    }

private:
    static constexpr std::size_t kMaxPlans = 64;
    std::unordered_map<std::uint64_t, Plan> plans_;
};

const Radix2Plan& radix2_plan(std::size_t n, int sign)
{
    thread_local PlanCache<Radix2Plan> cache;
    return cache.get(n, sign, [&] {
        Radix2Plan p;
        for (std::size_t i = 1, j = 0; i < n; ++i) {
            std::size_t bit = n >> 1;
            for (; j & bit; bit >>= 1) {
                j ^= bit;
            }
            j ^= bit;
            if (i < j) {
                p.swaps.push_back(i);
                p.swaps.push_back(j);
            }
        }
        p.twiddle.resize(n / 2);
        for (std::size_t k = 0; k < n / 2; ++k) {
            const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
            p.twiddle[k] = {std::cos(angle), std::sin(angle)};
        }
        return p;
    });
}

// In-place iterative radix-2, sign = -1 forward, +1 inverse (unnormalized).
void radix2(std::vector<Complex>& a, int sign)
{
    const std::size_t n = a.size();
    if (n < 2) {
        return;
    }
    const Radix2Plan& plan = radix2_plan(n, sign);
    for (std::size_t s = 0; s < plan.swaps.size(); s += 2) {
        std::swap(a[plan.swaps[s]], a[plan.swaps[s + 1]]);
    }
    double* d = reinterpret_cast<double*>(a.data());
    const double* tw = reinterpret_cast<const double*>(plan.twiddle.data());
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t step = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < half; ++k) {
                double* u = d + 2 * (i + k);
                double* v = d + 2 * (i + k + half);
                const double wr = tw[2 * k * step], wi = tw[2 * k * step + 1];
                const double tr = v[0] * wr - v[1] * wi;
                const double ti = v[0] * wi + v[1] * wr;
                v[0] = u[0] - tr;
                v[1] = u[1] - ti;
                u[0] += tr;
                u[1] += ti;
            }
        }
    }
}

const BluesteinPlan& bluestein_plan(std::size_t n, int sign)
{
    thread_local PlanCache<BluesteinPlan> cache;
    return cache.get(n, sign, [&] {
        BluesteinPlan p;
        p.m = 1;
        while (p.m < 2 * n - 1) {
            p.m <<= 1;
        }
        p.chirp.resize(n);
        const std::size_t wrap = 2 * n;
        std::size_t k2 = 0;
        for (std::size_t k = 0; k < n; ++k) {
            // k^2 mod 2n, accumulated, keeps the angle argument small for large k.
            if (k > 0) {
                k2 = (k2 + 2 * k - 1) % wrap;
            }
            const double angle = sign * std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
            p.chirp[k] = {std::cos(angle), std::sin(angle)};
        }
        p.kernel.assign(p.m, Complex{});
        p.kernel[0] = std::conj(p.chirp[0]);
        for (std::size_t k = 1; k < n; ++k) {
            p.kernel[k] = p.kernel[p.m - k] = std::conj(p.chirp[k]);
        }
        radix2(p.kernel, -1);
        return p;
    });
}

// Bluestein chirp-z for arbitrary n.
std::vector<Complex> bluestein(std::span<const Complex> x, int sign)
{
    const std::size_t n = x.size();
    const BluesteinPlan& plan = bluestein_plan(n, sign);
    const std::size_t m = plan.m;
    std::vector<Complex> a(m);
    for (std::size_t k = 0; k < n; ++k) {
        a[k] = x[k] * plan.chirp[k];
    }
    radix2(a, -1);
    for (std::size_t i = 0; i < m; ++i) {
        a[i] *= plan.kernel[i];
    }
    radix2(a, +1);
    std::vector<Complex> out(n);
    const double scale = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) {
        out[k] = a[k] * scale * plan.chirp[k];
    }
    return out;
}

ComplexVector transform(std::span<const Complex> v, int sign)
{
    if (v.empty()) {
        throw std::invalid_argument("fft: empty input");
    }
    if (is_power_of_two(v.size())) {
        ComplexVector a(v.begin(), v.end());
        radix2(a, sign);
        return a;
    }
    return bluestein(v, sign);
}

double kaiser(double t, double beta)
{
    // t in [-1, 1]
    if (t <= -1.0 || t >= 1.0) {
        return 0.0;
    }
    return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - t * t)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x)
{
    if (x == 0.0) {
        return 1.0;
    }
    const double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

} // namespace

void RealSignal::validate() const
{
    if (rate <= 0) {
        throw std::invalid_argument("signal rate must be positive");
    }
    for (double s : samples) {
        if (!std::isfinite(s)) {
            throw std::invalid_argument("signal contains non-finite samples");
        }
    }
}

ComplexVector fft(std::span<const Complex> v) { return transform(v, -1); }

ComplexVector ifft(std::span<const Complex> v)
{
    ComplexVector out = transform(v, +1);
    const double scale = 1.0 / static_cast<double>(out.size());
    for (auto& c : out) {
        c *= scale;
    }
    return out;
}

ComplexVector fft(std::span<const double> v)
{
    ComplexVector c(v.begin(), v.end());
    return fft(std::span<const Complex>(c));
}

ComplexVector analytic_completion(std::span<const double> real)
{
    const std::size_t n = real.size();
    if (n < 2) {
        throw std::invalid_argument("analytic_completion: length must be >= 2");
    }
    ComplexVector spectrum = fft(real);
    // bins 1..ceil(n/2)-1 are strictly positive; n/2 is Nyquist when n is even.
    const std::size_t positive_end = (n + 1) / 2;
    for (std::size_t k = 1; k < positive_end; ++k) {
        spectrum[k] *= 2.0;
    }
    for (std::size_t k = n / 2 + 1; k < n; ++k) {
        spectrum[k] = 0.0;
    }
    ComplexVector out = ifft(spectrum);
    // Real part is the input by construction; pin it to avoid round-off drift.
    for (std::size_t i = 0; i < n; ++i) {
        out[i].real(real[i]);
    }
    return out;
}

std::vector<double> hilbert_transform(std::span<const double> real)
{
    const ComplexVector analytic = analytic_completion(real);
    std::vector<double> out(analytic.size());
    std::transform(analytic.begin(), analytic.end(), out.begin(), [](const Complex& c) { return c.imag(); });
    return out;
}

void hilbert_transform_pair(std::span<const double> a, std::span<const double> b, std::span<double> ha,
                            std::span<double> hb)
{
    const std::size_t n = a.size();
    if (n < 2 || b.size() != n || ha.size() != n || hb.size() != n) {
        throw std::invalid_argument("hilbert_transform_pair: rows must share a length >= 2");
    }
    ComplexVector z(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = {a[i], b[i]};
    }
    ComplexVector spectrum = fft(std::span<const Complex>(z));
    // H multiplies positive bins by -j and negative bins by +j; DC and Nyquist vanish.
    spectrum[0] = 0.0;
    const std::size_t positive_end = (n + 1) / 2;
    for (std::size_t k = 1; k < positive_end; ++k) {
        spectrum[k] = {spectrum[k].imag(), -spectrum[k].real()};
    }
    if (n % 2 == 0) {
        spectrum[n / 2] = 0.0;
    }
    for (std::size_t k = n / 2 + 1; k < n; ++k) {
        spectrum[k] = {-spectrum[k].imag(), spectrum[k].real()};
    }
    const ComplexVector h = ifft(spectrum);
    for (std::size_t i = 0; i < n; ++i) {
        ha[i] = h[i].real();
        hb[i] = h[i].imag();
    }
}

std::vector<double> hann_window(std::size_t length)
{
    if (length == 0) {
        throw std::invalid_argument("hann_window: length must be >= 1");
    }
    if (length == 1) {
        return {1.0};
    }
    std::vector<double> w(length);
    const double denom = static_cast<double>(length - 1);
    for (std::size_t n = 0; n < length; ++n) {
        w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / denom);
    }
    // exact symmetry
    for (std::size_t n = 0; n < length / 2; ++n) {
        w[length - 1 - n] = w[n];
    }
    return w;
}

RealSignal resample(const RealSignal& signal, int target_rate)
{
    if (target_rate <= 0) {
        throw std::invalid_argument("resample: target rate must be positive");
    }
    if (signal.rate <= 0) {
        throw std::invalid_argument("resample: source rate must be positive");
    }
    if (signal.rate == target_rate) {
        return signal;
    }
    constexpr int half_crossings = 32;
    constexpr double beta = 8.6;
    constexpr double rolloff = 0.9;

    const long long src = signal.rate;
    const long long dst = target_rate;
    const long long g = std::gcd(src, dst);
    const long long up = dst / g;   // output samples per period
    const long long down = src / g; // input samples per period

    // Cutoff relative to the source Nyquist.
    const double cutoff = rolloff * std::min(1.0, static_cast<double>(dst) / static_cast<double>(src));
    const double half_width = half_crossings / cutoff; // in source samples
    const long long taps_half = static_cast<long long>(std::ceil(half_width));

    const std::size_t in_len = signal.samples.size();
    const std::size_t out_len = static_cast<std::size_t>((static_cast<unsigned long long>(in_len) * dst + src - 1) / src);

    auto kernel = [&](double offset) {
        // offset = source position minus tap index
        return cutoff * sinc(cutoff * offset) * kaiser(offset / half_width, beta);
    };

    const bool tabulate = up <= 2048;
    std::vector<double> table;
    const std::size_t row_len = static_cast<std::size_t>(2 * taps_half + 1);
    if (tabulate) {
        table.resize(static_cast<std::size_t>(up) * row_len);
        for (long long phase = 0; phase < up; ++phase) {
            const double frac = static_cast<double>(phase) / static_cast<double>(up);
            for (long long j = -taps_half; j <= taps_half; ++j) {
                table[static_cast<std::size_t>(phase) * row_len + static_cast<std::size_t>(j + taps_half)] =
                    kernel(frac - static_cast<double>(j));
            }
        }
    }

    RealSignal out;
    out.rate = target_rate;
    out.samples.resize(out_len);
    for (std::size_t n = 0; n < out_len; ++n) {
        const unsigned long long num = static_cast<unsigned long long>(n) * static_cast<unsigned long long>(down);
        const long long base = static_cast<long long>(num / static_cast<unsigned long long>(up));
        const long long phase = static_cast<long long>(num % static_cast<unsigned long long>(up));
        const double frac = static_cast<double>(phase) / static_cast<double>(up);
        double acc = 0.0;
        for (long long j = -taps_half; j <= taps_half; ++j) {
            const long long idx = base + j;
            if (idx < 0 || idx >= static_cast<long long>(in_len)) {
                continue;
            }
            const double h = tabulate
                ? table[static_cast<std::size_t>(phase) * row_len + static_cast<std::size_t>(j + taps_half)]
                : kernel(frac - static_cast<double>(j));
            acc += h * signal.samples[static_cast<std::size_t>(idx)];
        }
        out.samples[n] = acc;
    }
    return out;
}

double spectral_centroid(std::span<const Complex> filter, double rate)
{
    if (filter.empty()) {
        throw std::invalid_argument("spectral_centroid: empty filter");
    }
    const ComplexVector spectrum = fft(filter);
    const std::size_t n = spectrum.size();
    double weighted = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k <= n / 2; ++k) {
        const double mag = std::abs(spectrum[k]);
        weighted += mag * static_cast<double>(k) * rate / static_cast<double>(n);
        total += mag;
    }
    return total > 0.0 ? weighted / total : 0.0;
}

double negative_frequency_energy(std::span<const Complex> v)
{
    const ComplexVector spectrum = fft(v);
    const std::size_t n = spectrum.size();
    double negative = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double e = std::norm(spectrum[k]);
        total += e;
        if (k > n / 2) {
            negative += e;
        }
    }
    return total > 0.0 ? negative / total : 0.0;
}

} // namespace afb
