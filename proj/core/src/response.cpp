#include "afb/response.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace afb {

std::string to_string(FeatureKind k)
{
    switch (k) {
    case FeatureKind::magnitude:
        return "magnitude";
    case FeatureKind::log:
        return "log";
    case FeatureKind::normalized:
        return "normalized";
    }
    return "?";
}

FeatureKind parse_feature_kind(const std::string& s)
{
    if (s == "magnitude") {
        return FeatureKind::magnitude;
    }
    if (s == "log") {
        return FeatureKind::log;
    }
    if (s == "normalized") {
        return FeatureKind::normalized;
    }
    throw std::invalid_argument("unknown feature kind '" + s + "'");
}

namespace {

double dot(const double* a, const double* b, std::size_t n)
{
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) {
        s0 += a[i] * b[i];
    }
    return (s0 + s1) + (s2 + s3);
}

RowSupport row_support(std::span<const RowSupport> support, std::size_t mu, std::size_t l_max)
{
    if (support.empty()) {
        return {0, l_max};
    }
    return support[mu];
}

} // namespace

std::size_t frame_count(std::size_t signal_length, std::size_t hop)
{
    if (hop < 1) {
        throw std::invalid_argument("hop must be >= 1");
    }
    return signal_length / hop + 1;
}

std::vector<double> pad_signal(std::span<const double> x, std::size_t hop, std::size_t l_max)
{
    const std::size_t frames = frame_count(x.size(), hop);
    const std::size_t front = l_max / 2;
    const std::size_t needed = (frames - 1) * hop + l_max;
    std::vector<double> padded(std::max(needed, front + x.size()), 0.0);
    std::copy(x.begin(), x.end(), padded.begin() + static_cast<std::ptrdiff_t>(front));
    return padded;
}

Matrix strided_response(std::span<const double> x, const Matrix& weights, std::size_t hop,
                        std::span<const RowSupport> support)
{
    if (x.empty()) {
        throw std::invalid_argument("strided_response: empty signal");
    }
    if (hop < 1) {
        throw std::invalid_argument("strided_response: hop must be >= 1");
    }
    if (!support.empty() && support.size() != weights.rows()) {
        throw std::invalid_argument("strided_response: support/weight row mismatch");
    }
    const std::size_t l_max = weights.cols();
    const std::vector<double> padded = pad_signal(x, hop, l_max);
    const std::size_t frames = frame_count(x.size(), hop);
    Matrix out(weights.rows(), frames);
    for (std::size_t mu = 0; mu < weights.rows(); ++mu) {
        const RowSupport s = row_support(support, mu, l_max);
        const double* w = weights.row(mu).data() + s.begin;
        for (std::size_t k = 0; k < frames; ++k) {
            out(mu, k) = dot(padded.data() + k * hop + s.begin, w, s.length());
        }
    }
    return out;
}

Matrix strided_weight_gradient(std::span<const double> x, const Matrix& d_resp, std::size_t hop, std::size_t l_max,
                               std::span<const RowSupport> support)
{
    if (x.empty()) {
        throw std::invalid_argument("strided_weight_gradient: empty signal");
    }
    const std::size_t frames = frame_count(x.size(), hop);
    if (d_resp.cols() != frames) {
        throw std::invalid_argument("strided_weight_gradient: frame count mismatch");
    }
    const std::vector<double> padded = pad_signal(x, hop, l_max);
    Matrix grad(d_resp.rows(), l_max);
    for (std::size_t mu = 0; mu < d_resp.rows(); ++mu) {
        const RowSupport s = row_support(support, mu, l_max);
        double* g = grad.row(mu).data() + s.begin;
        const std::size_t len = s.length();
        for (std::size_t k = 0; k < frames; ++k) {
            const double d = d_resp(mu, k);
            if (d == 0.0) {
                continue;
            }
            const double* xp = padded.data() + k * hop + s.begin;
            for (std::size_t n = 0; n < len; ++n) {
                g[n] += d * xp[n];
            }
        }
    }
    return grad;
}

Matrix l2_pool(const Matrix& re, const Matrix& im)
{
    if (!re.same_shape(im)) {
        throw std::invalid_argument("l2_pool: shape mismatch");
    }
    Matrix out(re.rows(), re.cols());
    const auto a = re.flat();
    const auto b = im.flat();
    auto o = out.flat();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = std::sqrt(a[i] * a[i] + b[i] * b[i]);
    }
    return out;
}

FeatureMap classic_magnitude(const RealSignal& x, const Filterbank& fb)
{
    if (!fb.imag) {
        throw std::invalid_argument("classic_magnitude: filterbank has no imaginary rows");
    }
    const auto support = fb.supports();
    const Matrix re = strided_response(x.samples, fb.real, fb.spec.hop, support);
    const Matrix im = strided_response(x.samples, *fb.imag, fb.spec.hop, support);
    return {l2_pool(re, im), FeatureKind::magnitude, fb.spec.hop, x.rate};
}

FeatureMap hilbert_magnitude(const RealSignal& x, const Filterbank& fb)
{
    if (fb.imag) {
        throw std::invalid_argument("hilbert_magnitude: filterbank stores explicit imaginary rows");
    }
    const Matrix re = strided_response(x.samples, fb.real, fb.spec.hop, fb.supports());
    const Matrix im = strided_response(x.samples, fb.effective_imag(), fb.spec.hop);
    return {l2_pool(re, im), FeatureKind::magnitude, fb.spec.hop, x.rate};
}

FeatureMap filterbank_magnitude(const RealSignal& x, const Filterbank& fb)
{
    return fb.imag ? classic_magnitude(x, fb) : hilbert_magnitude(x, fb);
}

FeatureMap log_compress(const FeatureMap& m, double epsilon)
{
    if (m.kind != FeatureKind::magnitude) {
        throw std::invalid_argument("log_compress: input must be a magnitude map");
    }
    if (!(epsilon > 0.0)) {
        throw std::invalid_argument("log_compress: epsilon must be positive");
    }
    FeatureMap out = m;
    out.kind = FeatureKind::log;
    for (double& v : out.values.flat()) {
        v = std::log(v + epsilon);
    }
    return out;
}

BatchNormState::BatchNormState(std::size_t n_bins)
    : scale(n_bins, 1.0), shift(n_bins, 0.0), running_mean(n_bins, 0.0), running_var(n_bins, 1.0)
{
}

BatchNormState BatchNormState::identity(std::size_t n_bins)
{
    BatchNormState s(n_bins);
    s.has_running_stats = true;
    return s;
}

void BatchNormState::validate() const
{
    const std::size_t n = scale.size();
    if (shift.size() != n || running_mean.size() != n || running_var.size() != n) {
        throw std::invalid_argument("batch norm: inconsistent vector sizes");
    }
    if (!(momentum > 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("batch norm: momentum must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) {
        throw std::invalid_argument("batch norm: epsilon must be positive");
    }
    for (double v : running_var) {
        if (!(v >= 0.0)) {
            throw std::invalid_argument("batch norm: negative running variance");
        }
    }
}

std::vector<FeatureMap> batch_norm(std::span<const FeatureMap> batch, const BatchNormState& state, Mode mode,
                                   BatchStats* stats)
{
    state.validate();
    const std::size_t bins = state.n_bins();
    for (const auto& m : batch) {
        if (m.kind != FeatureKind::log) {
            throw std::invalid_argument("batch_norm: input must be a log map");
        }
        if (m.n_bins() != bins) {
            throw std::invalid_argument("batch_norm: bin count mismatch");
        }
    }
    std::vector<double> mean(bins, 0.0), var(bins, 0.0);
    std::size_t count = 0;
    if (mode == Mode::train) {
        for (const auto& m : batch) {
            count += m.n_frames();
        }
        if (count == 0) {
            throw std::invalid_argument("batch_norm: empty batch");
        }
        for (std::size_t mu = 0; mu < bins; ++mu) {
            double s = 0.0;
            for (const auto& m : batch) {
                for (double v : m.values.row(mu)) {
                    s += v;
                }
            }
            mean[mu] = s / static_cast<double>(count);
            double ss = 0.0;
            for (const auto& m : batch) {
                for (double v : m.values.row(mu)) {
                    ss += (v - mean[mu]) * (v - mean[mu]);
                }
            }
            var[mu] = ss / static_cast<double>(count);
        }
        if (stats) {
            *stats = {mean, var, count};
        }
    } else {
        if (!state.has_running_stats) {
            throw std::invalid_argument("batch_norm: eval mode requires running statistics");
        }
        mean = state.running_mean;
        var = state.running_var;
    }
    std::vector<FeatureMap> out(batch.begin(), batch.end());
    for (auto& m : out) {
        m.kind = FeatureKind::normalized;
        for (std::size_t mu = 0; mu < bins; ++mu) {
            const double inv_std = 1.0 / std::sqrt(var[mu] + state.epsilon);
            for (double& v : m.values.row(mu)) {
                v = state.scale[mu] * (v - mean[mu]) * inv_std + state.shift[mu];
            }
        }
    }
    return out;
}

void update_running_stats(BatchNormState& state, const BatchStats& stats)
{
    const double keep = state.momentum;
    const double n = static_cast<double>(stats.count);
    const double unbias = stats.count > 1 ? n / (n - 1.0) : 1.0;
    for (std::size_t mu = 0; mu < state.n_bins(); ++mu) {
        if (state.has_running_stats) {
            state.running_mean[mu] = keep * state.running_mean[mu] + (1.0 - keep) * stats.mean[mu];
            state.running_var[mu] = keep * state.running_var[mu] + (1.0 - keep) * stats.var[mu] * unbias;
        } else {
            state.running_mean[mu] = stats.mean[mu];
            state.running_var[mu] = stats.var[mu] * unbias;
        }
    }
    state.has_running_stats = true;
}

} // namespace afb
