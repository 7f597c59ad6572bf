#include "afb/design.hpp"
#include "afb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace afb {

std::string to_string(Variant v)
{
    switch (v) {
    case Variant::classic:
        return "classic";
    case Variant::hilbert:
        return "hilbert";
    case Variant::fixed:
        return "fixed";
    }
    return "?";
}

std::string to_string(InitKind k)
{
    switch (k) {
    case InitKind::vqt:
        return "vqt";
    case InitKind::comb:
        return "comb";
    case InitKind::random:
        return "random";
    }
    return "?";
}

Variant parse_variant(const std::string& s)
{
    if (s == "classic" || s == "cl") {
        return Variant::classic;
    }
    if (s == "hilbert" || s == "hb") {
        return Variant::hilbert;
    }
    if (s == "fixed") {
        return Variant::fixed;
    }
    throw std::invalid_argument("unknown variant '" + s + "'");
}

InitKind parse_init(const std::string& s)
{
    if (s == "vqt") {
        return InitKind::vqt;
    }
    if (s == "comb") {
        return InitKind::comb;
    }
    if (s == "random" || s == "rnd") {
        return InitKind::random;
    }
    throw std::invalid_argument("unknown init '" + s + "'");
}

double FilterbankSpec::spacing_q() const
{
    return 1.0 / (std::exp2(1.0 / static_cast<double>(n_bpo)) - 1.0);
}

double FilterbankSpec::resolved_gamma() const
{
    return gamma ? *gamma : erb_gamma(spacing_q());
}

void FilterbankSpec::validate() const
{
    if (rate <= 0) {
        throw std::invalid_argument("rate must be positive");
    }
    if (!(f_min > 0.0) || !std::isfinite(f_min)) {
        throw std::invalid_argument("f_min must be positive");
    }
    if (n_bins < 1) {
        throw std::invalid_argument("n_bins must be >= 1");
    }
    if (n_bpo < 1) {
        throw std::invalid_argument("n_bpo must be >= 1");
    }
    if (hop < 1) {
        throw std::invalid_argument("hop must be >= 1");
    }
    if (gamma && (!(*gamma >= 0.0) || !std::isfinite(*gamma))) {
        throw std::invalid_argument("gamma must be >= 0");
    }
    int top_harmonic = 1;
    if (init == InitKind::comb) {
        if (harmonics.empty()) {
            throw std::invalid_argument("comb init needs at least one harmonic");
        }
        for (int h : harmonics) {
            if (h < 1) {
                throw std::invalid_argument("harmonics must be positive integers");
            }
            top_harmonic = std::max(top_harmonic, h);
        }
    }
    const double top = f_min * std::exp2(static_cast<double>(n_bins - 1) / static_cast<double>(n_bpo));
    if (top * top_harmonic >= rate / 2.0) {
        throw std::invalid_argument("highest center frequency (times top harmonic) reaches Nyquist");
    }
}

std::vector<RowSupport> Filterbank::supports() const
{
    std::vector<RowSupport> out(n_bins());
    for (std::size_t mu = 0; mu < out.size(); ++mu) {
        out[mu] = support(mu);
    }
    return out;
}

Matrix hilbert_rows(const Matrix& rows)
{
    Matrix out(rows.rows(), rows.cols());
    std::size_t mu = 0;
    for (; mu + 1 < rows.rows(); mu += 2) {
        hilbert_transform_pair(rows.row(mu), rows.row(mu + 1), out.row(mu), out.row(mu + 1));
    }
    if (mu < rows.rows()) {
        const auto h = hilbert_transform(rows.row(mu));
        std::copy(h.begin(), h.end(), out.row(mu).begin());
    }
    return out;
}

Matrix Filterbank::effective_imag() const
{
    if (imag) {
        return *imag;
    }
    return hilbert_rows(real);
}

ComplexVector Filterbank::atom(std::size_t mu) const
{
    if (!imag) {
        return analytic_completion(real.row(mu));
    }
    ComplexVector out(receptive_field());
    for (std::size_t n = 0; n < out.size(); ++n) {
        out[n] = {real(mu, n), -(*imag)(mu, n)};
    }
    return out;
}

void Filterbank::validate() const
{
    const std::size_t bins = real.rows();
    if (lengths.size() != bins || offsets.size() != bins || frequencies.size() != bins) {
        throw std::invalid_argument("filterbank: per-filter metadata does not match bin count");
    }
    if (spec.variant == Variant::hilbert && imag) {
        throw std::invalid_argument("filterbank: hilbert variant must not store imaginary rows");
    }
    if (spec.variant != Variant::hilbert && !imag) {
        throw std::invalid_argument("filterbank: classic/fixed variant requires imaginary rows");
    }
    if (imag && !imag->same_shape(real)) {
        throw std::invalid_argument("filterbank: real/imag shape mismatch");
    }
    const std::size_t l_max = *std::max_element(lengths.begin(), lengths.end());
    if (l_max != real.cols()) {
        throw std::invalid_argument("filterbank: receptive field differs from the longest filter");
    }
    auto check = [&](const Matrix& m) {
        for (std::size_t mu = 0; mu < bins; ++mu) {
            if (lengths[mu] == 0 || offsets[mu] + lengths[mu] > m.cols()) {
                throw std::invalid_argument("filterbank: support outside receptive field");
            }
            const auto row = m.row(mu);
            for (std::size_t n = 0; n < row.size(); ++n) {
                if (!std::isfinite(row[n])) {
                    throw std::invalid_argument("filterbank: non-finite weight");
                }
                const bool inside = n >= offsets[mu] && n < offsets[mu] + lengths[mu];
                if (!inside && row[n] != 0.0) {
                    throw std::invalid_argument("filterbank: weight outside filter support");
                }
            }
        }
    };
    check(real);
    if (imag) {
        check(*imag);
    }
}

std::vector<double> center_frequencies(const FilterbankSpec& spec)
{
    spec.validate();
    std::vector<double> f(spec.n_bins);
    for (std::size_t mu = 0; mu < spec.n_bins; ++mu) {
        f[mu] = spec.f_min * std::exp2(static_cast<double>(mu) / static_cast<double>(spec.n_bpo));
    }
    return f;
}

BandwidthsAndQ bandwidths_and_q(std::span<const double> freqs, double gamma, std::optional<double> last_ratio)
{
    if (freqs.empty()) {
        throw std::invalid_argument("bandwidths_and_q: no frequencies");
    }
    for (std::size_t i = 0; i < freqs.size(); ++i) {
        if (!(freqs[i] > 0.0) || (i > 0 && !(freqs[i] > freqs[i - 1]))) {
            throw std::invalid_argument("bandwidths_and_q: frequencies must be positive and strictly increasing");
        }
    }
    double ratio = 0.0;
    if (freqs.size() >= 2) {
        ratio = freqs[freqs.size() - 1] / freqs[freqs.size() - 2];
    } else if (last_ratio && *last_ratio > 1.0) {
        ratio = *last_ratio;
    } else {
        throw std::invalid_argument("bandwidths_and_q: single frequency needs a spacing ratio > 1");
    }
    BandwidthsAndQ out;
    out.bandwidths.resize(freqs.size());
    out.q.resize(freqs.size());
    for (std::size_t i = 0; i < freqs.size(); ++i) {
        const double next = i + 1 < freqs.size() ? freqs[i + 1] : freqs[i] * ratio;
        out.bandwidths[i] = next - freqs[i] + gamma;
        out.q[i] = freqs[i] / out.bandwidths[i];
    }
    return out;
}

double erb_gamma(double q_constant)
{
    if (!(q_constant > 0.0)) {
        throw std::invalid_argument("erb_gamma: q must be positive");
    }
    return 24.7 / (0.108 * q_constant);
}

std::vector<std::size_t> filter_lengths(std::span<const double> freqs, std::span<const double> q, double rate)
{
    if (freqs.size() != q.size()) {
        throw std::invalid_argument("filter_lengths: size mismatch");
    }
    if (!(rate > 0.0)) {
        throw std::invalid_argument("filter_lengths: rate must be positive");
    }
    std::vector<std::size_t> out(freqs.size());
    for (std::size_t i = 0; i < freqs.size(); ++i) {
        if (!(freqs[i] > 0.0) || !(q[i] > 0.0)) {
            throw std::invalid_argument("filter_lengths: frequencies and Q must be positive");
        }
        const double l = std::ceil(q[i] * rate / freqs[i]);
        if (l < 1.0) {
            throw std::invalid_argument("filter_lengths: zero-length filter");
        }
        out[i] = static_cast<std::size_t>(l);
    }
    return out;
}

namespace {

struct Layout {
    std::vector<double> freqs;
    std::vector<std::size_t> lengths;
    std::vector<std::size_t> offsets;
    std::size_t l_max = 0;
};

Layout layout_for(const FilterbankSpec& spec)
{
    Layout l;
    l.freqs = center_frequencies(spec);
    const double ratio = std::exp2(1.0 / static_cast<double>(spec.n_bpo));
    const auto bq = bandwidths_and_q(l.freqs, spec.resolved_gamma(), ratio);
    l.lengths = filter_lengths(l.freqs, bq.q, spec.rate);
    l.l_max = *std::max_element(l.lengths.begin(), l.lengths.end());
    l.offsets.resize(l.lengths.size());
    for (std::size_t mu = 0; mu < l.lengths.size(); ++mu) {
        l.offsets[mu] = (l.l_max - l.lengths[mu]) / 2;
    }
    return l;
}

Filterbank empty_bank(const FilterbankSpec& spec, const Layout& l, bool with_imag)
{
    Filterbank fb;
    fb.spec = spec;
    fb.frequencies = l.freqs;
    fb.lengths = l.lengths;
    fb.offsets = l.offsets;
    fb.real = Matrix(l.freqs.size(), l.l_max);
    if (with_imag) {
        fb.imag = Matrix(l.freqs.size(), l.l_max);
    }
    return fb;
}

// Hann-windowed e^{-j 2 pi f n / rate}, n = 0..length-1, accumulated into
// the row starting at `start`.
void add_basis(std::span<double> re, std::span<double> im, std::size_t start, std::size_t length,
               double freq, double rate)
{
    const auto w = hann_window(length);
    for (std::size_t n = 0; n < length; ++n) {
        const double phase = 2.0 * std::numbers::pi * freq * static_cast<double>(n) / rate;
        re[start + n] += w[n] * std::cos(phase);
        im[start + n] -= w[n] * std::sin(phase);
    }
}

} // namespace

Filterbank vqt_weights(const FilterbankSpec& spec)
{
    FilterbankSpec s = spec;
    s.init = InitKind::vqt;
    const Layout l = layout_for(s);
    Filterbank fb = empty_bank(s, l, true);
    for (std::size_t mu = 0; mu < l.freqs.size(); ++mu) {
        add_basis(fb.real.row(mu), fb.imag->row(mu), l.offsets[mu], l.lengths[mu], l.freqs[mu], s.rate);
    }
    if (s.variant == Variant::hilbert) {
        fb.imag.reset();
    }
    return fb;
}

Filterbank comb_weights(const FilterbankSpec& spec, std::span<const int> harmonics)
{
    FilterbankSpec s = spec;
    s.init = InitKind::comb;
    s.harmonics.assign(harmonics.begin(), harmonics.end());
    s.validate();

    const Layout l = layout_for(s);
    const Filterbank reference = vqt_weights([&] {
        FilterbankSpec v = s;
        v.variant = Variant::classic;
        v.init = InitKind::vqt;
        return v;
    }());
    Filterbank fb = empty_bank(s, l, true);
    const double ratio = std::exp2(1.0 / static_cast<double>(s.n_bpo));
    const double gamma = s.resolved_gamma();
    for (std::size_t mu = 0; mu < l.freqs.size(); ++mu) {
        for (int h : harmonics) {
            const double f = h * l.freqs[mu];
            std::size_t len = l.lengths[mu];
            if (h != 1) {
                const double bandwidth = f * (ratio - 1.0) + gamma;
                len = static_cast<std::size_t>(std::ceil(f / bandwidth * s.rate / f));
                len = std::clamp<std::size_t>(len, 1, l.lengths[mu]);
            }
            const std::size_t start = l.offsets[mu] + (l.lengths[mu] - len) / 2;
            add_basis(fb.real.row(mu), fb.imag->row(mu), start, len, f, s.rate);
        }
        double target = 0.0;
        double norm = 0.0;
        for (std::size_t n = 0; n < l.l_max; ++n) {
            target += reference.real(mu, n) * reference.real(mu, n) + (*reference.imag)(mu, n) * (*reference.imag)(mu, n);
            norm += fb.real(mu, n) * fb.real(mu, n) + (*fb.imag)(mu, n) * (*fb.imag)(mu, n);
        }
        const double scale = norm > 0.0 ? std::sqrt(target / norm) : 0.0;
        for (std::size_t n = 0; n < l.l_max; ++n) {
            fb.real(mu, n) *= scale;
            (*fb.imag)(mu, n) *= scale;
        }
    }
    if (s.variant == Variant::hilbert) {
        fb.imag.reset();
    }
    return fb;
}

Filterbank random_weights(const FilterbankSpec& spec, std::uint64_t seed)
{
    FilterbankSpec s = spec;
    s.init = InitKind::random;
    s.seed = seed;
    const Layout l = layout_for(s);
    const bool with_imag = s.variant != Variant::hilbert;
    Filterbank fb = empty_bank(s, l, with_imag);
    Rng rng(seed);
    for (std::size_t mu = 0; mu < l.freqs.size(); ++mu) {
        const double sd = 1.0 / std::sqrt(static_cast<double>(l.lengths[mu]));
        for (std::size_t n = l.offsets[mu]; n < l.offsets[mu] + l.lengths[mu]; ++n) {
            fb.real(mu, n) = sd * rng.normal();
        }
        if (with_imag) {
            for (std::size_t n = l.offsets[mu]; n < l.offsets[mu] + l.lengths[mu]; ++n) {
                (*fb.imag)(mu, n) = sd * rng.normal();
            }
        }
    }
    return fb;
}

Filterbank design_filterbank(const FilterbankSpec& spec)
{
    switch (spec.init) {
    case InitKind::vqt:
        return vqt_weights(spec);
    case InitKind::comb:
        return comb_weights(spec, spec.harmonics);
    case InitKind::random:
        return random_weights(spec, spec.seed);
    }
    throw std::invalid_argument("unknown init kind");
}

} // namespace afb
