#include "afb/dropout.hpp"
#include "afb/error.hpp"
#include "afb/response.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace afb {

VarDropoutState VarDropoutState::for_bank(const Filterbank& fb, double init, double kl_scale, std::uint64_t seed)
{
    VarDropoutState s;
    s.log_var = Matrix(fb.real.rows(), fb.real.cols(), init);
    if (fb.variant() == Variant::classic) {
        s.log_var_imag = Matrix(fb.real.rows(), fb.real.cols(), init);
    }
    s.kl_scale = kl_scale;
    s.rng_seed = seed;
    return s;
}

void VarDropoutState::validate_against(const Filterbank& fb) const
{
    if (!log_var.same_shape(fb.real)) {
        throw std::invalid_argument("variational state: log_var shape differs from the real weights");
    }
    if (fb.variant() == Variant::hilbert && log_var_imag) {
        throw std::invalid_argument("variational state: hilbert variant has no imaginary log variances");
    }
    if (log_var_imag && (!fb.imag || !log_var_imag->same_shape(*fb.imag))) {
        throw std::invalid_argument("variational state: log_var_imag shape differs from the imaginary weights");
    }
    if (!(kl_scale >= 0.0)) {
        throw std::invalid_argument("variational state: kl_scale must be >= 0");
    }
    for (double v : log_var.flat()) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("variational state: non-finite log variance");
        }
    }
}

namespace {

NoisySample draw(const Matrix& mean_resp, const Matrix& variance, Rng& rng)
{
    if (!variance.same_shape(mean_resp)) {
        throw std::invalid_argument("noisy response: variance map shape mismatch");
    }
    NoisySample out{mean_resp, Matrix(mean_resp.rows(), mean_resp.cols()), Matrix(mean_resp.rows(), mean_resp.cols())};
    const auto v = variance.flat();
    auto value = out.value.flat();
    auto noise = out.noise.flat();
    auto sd = out.std_dev.flat();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] < -1e-12) {
            throw Error(Errc::negative_variance, "noisy response: negative variance " + std::to_string(v[i]));
        }
        noise[i] = rng.normal();
        sd[i] = std::sqrt(std::max(v[i], 0.0));
        value[i] += sd[i] * noise[i];
    }
    return out;
}

std::vector<double> squared(std::span<const double> x)
{
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] * x[i];
    }
    return out;
}

bool inside(std::span<const RowSupport> support, std::size_t mu, std::size_t n)
{
    return support.empty() || (n >= support[mu].begin && n < support[mu].end);
}

} // namespace

NoisySample noisy_response(const Matrix& mean_resp, std::span<const double> x, const Matrix& log_var,
                           std::size_t hop, std::span<const RowSupport> support, Rng& rng)
{
    Matrix sigma2(log_var.rows(), log_var.cols());
    for (std::size_t mu = 0; mu < log_var.rows(); ++mu) {
        for (std::size_t n = 0; n < log_var.cols(); ++n) {
            if (inside(support, mu, n)) {
                sigma2(mu, n) = std::exp(log_var(mu, n));
            }
        }
    }
    const Matrix variance = strided_response(squared(x), sigma2, hop, support);
    return draw(mean_resp, variance, rng);
}

NoisySample gaussian_dropout_response(const Matrix& mean_resp, std::span<const double> x, double fixed_log_var,
                                      std::size_t hop, std::size_t l_max, std::span<const RowSupport> support,
                                      Rng& rng)
{
    Matrix sigma2(mean_resp.rows(), l_max);
    const double s2 = std::exp(fixed_log_var);
    for (std::size_t mu = 0; mu < sigma2.rows(); ++mu) {
        for (std::size_t n = 0; n < l_max; ++n) {
            if (inside(support, mu, n)) {
                sigma2(mu, n) = s2;
            }
        }
    }
    const Matrix variance = strided_response(squared(x), sigma2, hop, support);
    return draw(mean_resp, variance, rng);
}

double log_alpha(double weight, double log_var) { return log_var - std::log(weight * weight + kAlphaFloor); }

namespace {

double sigmoid(double z)
{
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// ln(1 + e^{-t}) without overflow
double softplus_neg(double t)
{
    if (t > 0.0) {
        return std::log1p(std::exp(-t));
    }
    return -t + std::log1p(std::exp(t));
}

} // namespace

double kl_term(double la)
{
    return -(kKlK1 * sigmoid(kKlK2 + kKlK3 * la) - 0.5 * softplus_neg(la) - kKlK1);
}

double kl_term_derivative(double la)
{
    const double s = sigmoid(kKlK2 + kKlK3 * la);
    // d/dt ln(1 + e^{-t}) = -sigmoid(-t)
    return -(kKlK1 * kKlK3 * s * (1.0 - s) + 0.5 * sigmoid(-la));
}

KlResult kl_penalty(const Matrix& weights, const Matrix& log_var, double kl_scale)
{
    if (!weights.same_shape(log_var)) {
        throw std::invalid_argument("kl_penalty: shape mismatch");
    }
    KlResult out{0.0, Matrix(weights.rows(), weights.cols()), Matrix(weights.rows(), weights.cols())};
    const auto w = weights.flat();
    const auto lv = log_var.flat();
    auto dw = out.d_weights.flat();
    auto dlv = out.d_log_var.flat();
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double la = log_alpha(w[i], lv[i]);
        total += kl_term(la);
        const double g = kl_scale * kl_term_derivative(la);
        dlv[i] = g;
        dw[i] = g * (-2.0 * w[i] / (w[i] * w[i] + kAlphaFloor));
    }
    out.value = kl_scale * total;
    return out;
}

KlResult kl_penalty(const Matrix& weights, const Matrix& log_var, double kl_scale, std::span<const RowSupport> support)
{
    if (!weights.same_shape(log_var) || support.size() != weights.rows()) {
        throw std::invalid_argument("kl_penalty: shape mismatch");
    }
    KlResult out{0.0, Matrix(weights.rows(), weights.cols()), Matrix(weights.rows(), weights.cols())};
    double total = 0.0;
    for (std::size_t mu = 0; mu < weights.rows(); ++mu) {
        for (std::size_t n = support[mu].begin; n < support[mu].end; ++n) {
            const double w = weights(mu, n);
            const double la = log_alpha(w, log_var(mu, n));
            total += kl_term(la);
            const double g = kl_scale * kl_term_derivative(la);
            out.d_log_var(mu, n) = g;
            out.d_weights(mu, n) = g * (-2.0 * w / (w * w + kAlphaFloor));
        }
    }
    out.value = kl_scale * total;
    return out;
}

BernoulliMask bernoulli_dropout(const Matrix& weights, double rate, Rng& rng)
{
    if (!(rate >= 0.0) || rate >= 1.0) {
        throw std::invalid_argument("bernoulli_dropout: rate must lie in [0, 1)");
    }
    BernoulliMask out{weights, Matrix(weights.rows(), weights.cols(), 1.0)};
    if (rate == 0.0) {
        return out;
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    auto w = out.weights.flat();
    auto s = out.scale.flat();
    for (std::size_t i = 0; i < w.size(); ++i) {
        s[i] = rng.uniform() < rate ? 0.0 : keep_scale;
        w[i] *= s[i];
    }
    return out;
}

namespace {

std::vector<std::uint8_t> keep_mask(const Filterbank& fb, const Matrix& weights, const Matrix& log_var,
                                    double threshold, std::size_t& pruned, std::size_t& total)
{
    std::vector<std::uint8_t> keep(weights.size(), 1);
    for (std::size_t mu = 0; mu < weights.rows(); ++mu) {
        const RowSupport s = fb.support(mu);
        for (std::size_t n = s.begin; n < s.end; ++n) {
            ++total;
            if (log_alpha(weights(mu, n), log_var(mu, n)) > threshold) {
                keep[mu * weights.cols() + n] = 0;
                ++pruned;
            }
        }
    }
    return keep;
}

} // namespace

PruneResult prune(const Filterbank& fb, const VarDropoutState& state, double threshold_log_alpha)
{
    state.validate_against(fb);
    PruneResult out{fb, {}, 0.0};
    out.mask.threshold_log_alpha = threshold_log_alpha;
    std::size_t pruned = 0, total = 0;
    out.mask.keep = keep_mask(fb, fb.real, state.log_var, threshold_log_alpha, pruned, total);
    auto apply = [](Matrix& m, const std::vector<std::uint8_t>& keep) {
        auto v = m.flat();
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!keep[i]) {
                v[i] = 0.0;
            }
        }
    };
    apply(out.bank.real, out.mask.keep);
    if (fb.imag && state.log_var_imag) {
        out.mask.keep_imag = keep_mask(fb, *fb.imag, *state.log_var_imag, threshold_log_alpha, pruned, total);
        apply(*out.bank.imag, *out.mask.keep_imag);
    }
    out.sparsity = total > 0 ? static_cast<double>(pruned) / static_cast<double>(total) : 0.0;
    return out;
}

double prunable_fraction(const Filterbank& fb, const VarDropoutState& state, double threshold_log_alpha)
{
    return prune(fb, state, threshold_log_alpha).sparsity;
}

std::vector<double> prunable_fraction_per_filter(const Filterbank& fb, const VarDropoutState& state,
                                                 double threshold_log_alpha)
{
    state.validate_against(fb);
    std::vector<double> out(fb.n_bins(), 0.0);
    for (std::size_t mu = 0; mu < fb.n_bins(); ++mu) {
        const RowSupport s = fb.support(mu);
        std::size_t pruned = 0, total = 0;
        for (std::size_t n = s.begin; n < s.end; ++n) {
            ++total;
            pruned += log_alpha(fb.real(mu, n), state.log_var(mu, n)) > threshold_log_alpha;
            if (fb.imag && state.log_var_imag) {
                ++total;
                pruned += log_alpha((*fb.imag)(mu, n), (*state.log_var_imag)(mu, n)) > threshold_log_alpha;
            }
        }
        out[mu] = total ? static_cast<double>(pruned) / static_cast<double>(total) : 0.0;
    }
    return out;
}

} // namespace afb
