#include "afb/frontend.hpp"
#include "afb/error.hpp"

#include <cmath>
#include <stdexcept>

namespace afb {

std::string to_string(DropoutKind k)
{
    switch (k) {
    case DropoutKind::none:
        return "none";
    case DropoutKind::bernoulli:
        return "brn";
    case DropoutKind::gaussian:
        return "gau";
    case DropoutKind::variational:
        return "var";
    }
    return "?";
}

DropoutKind parse_dropout(const std::string& s)
{
    if (s == "none" || s.empty()) {
        return DropoutKind::none;
    }
    if (s == "brn" || s == "bernoulli") {
        return DropoutKind::bernoulli;
    }
    if (s == "gau" || s == "gaussian") {
        return DropoutKind::gaussian;
    }
    if (s == "var" || s == "variational") {
        return DropoutKind::variational;
    }
    throw std::invalid_argument("unknown dropout '" + s + "'");
}

namespace {

Matrix masked_exp(const Matrix& log_var, std::span<const RowSupport> support)
{
    Matrix out(log_var.rows(), log_var.cols());
    for (std::size_t mu = 0; mu < log_var.rows(); ++mu) {
        for (std::size_t n = support[mu].begin; n < support[mu].end; ++n) {
            out(mu, n) = std::exp(log_var(mu, n));
        }
    }
    return out;
}

Matrix constant_on_support(std::size_t rows, std::size_t cols, double value, std::span<const RowSupport> support)
{
    Matrix out(rows, cols);
    for (std::size_t mu = 0; mu < rows; ++mu) {
        for (std::size_t n = support[mu].begin; n < support[mu].end; ++n) {
            out(mu, n) = value;
        }
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

// mean + sqrt(max(v, 0)) * z, keeping z and the standard deviation.
void add_noise(Matrix& resp, const Matrix& variance, Rng& rng, std::optional<Matrix>& noise,
               std::optional<Matrix>& sd)
{
    noise = Matrix(resp.rows(), resp.cols());
    sd = Matrix(resp.rows(), resp.cols());
    auto r = resp.flat();
    const auto v = variance.flat();
    auto z = noise->flat();
    auto s = sd->flat();
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (v[i] < -1e-12) {
            throw Error(Errc::negative_variance, "negative response variance");
        }
        z[i] = rng.normal();
        s[i] = std::sqrt(std::max(v[i], 0.0));
        r[i] += s[i] * z[i];
    }
}

void mask_to_support(Matrix& m, std::span<const RowSupport> support)
{
    for (std::size_t mu = 0; mu < m.rows(); ++mu) {
        auto row = m.row(mu);
        for (std::size_t n = 0; n < support[mu].begin; ++n) {
            row[n] = 0.0;
        }
        for (std::size_t n = support[mu].end; n < row.size(); ++n) {
            row[n] = 0.0;
        }
    }
}

void accumulate(Matrix& into, const Matrix& add)
{
    auto a = into.flat();
    const auto b = add.flat();
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] += b[i];
    }
}

const std::vector<RowSupport> kNoSupport;

} // namespace

ForwardResult frontend_forward(std::span<const RealSignal> batch, const Filterbank& fb, const BatchNormState& bn,
                               const DropoutSettings& dropout, Mode mode)
{
    if (batch.empty()) {
        throw std::invalid_argument("frontend_forward: empty batch");
    }
    if (bn.n_bins() != fb.n_bins()) {
        throw std::invalid_argument("frontend_forward: batch norm size differs from the filterbank");
    }
    const bool hilbert = fb.variant() == Variant::hilbert;
    if (hilbert == fb.imag.has_value()) {
        throw std::invalid_argument("frontend_forward: variant and stored imaginary rows disagree");
    }
    if (dropout.kind == DropoutKind::variational) {
        if (!dropout.variational) {
            throw std::invalid_argument("frontend_forward: variational dropout needs a VarDropoutState");
        }
        dropout.variational->validate_against(fb);
    }

    ForwardResult result;
    FrontendTape& tape = result.tape;
    tape.variant = fb.variant();
    tape.dropout = mode == Mode::train ? dropout.kind : DropoutKind::none;
    tape.mode = mode;
    tape.hop = fb.spec.hop;
    tape.l_max = fb.receptive_field();
    tape.support = fb.supports();
    tape.bn_scale = bn.scale;

    Rng root(dropout.seed);
    tape.eff_real = fb.real;
    if (fb.imag) {
        tape.eff_imag = *fb.imag;
    }
    if (tape.dropout == DropoutKind::bernoulli) {
        Rng mask_rng = root.stream(0);
        auto re = bernoulli_dropout(fb.real, dropout.bernoulli_rate, mask_rng);
        tape.eff_real = std::move(re.weights);
        tape.drop_scale_re = std::move(re.scale);
        if (fb.imag) {
            auto im = bernoulli_dropout(*fb.imag, dropout.bernoulli_rate, mask_rng);
            tape.eff_imag = std::move(im.weights);
            tape.drop_scale_im = std::move(im.scale);
        }
    }
    if (hilbert) {
        tape.eff_imag = hilbert_rows(tape.eff_real);
    }
    if (tape.dropout == DropoutKind::variational) {
        tape.sigma2_re = masked_exp(dropout.variational->log_var, tape.support);
        if (dropout.variational->log_var_imag) {
            tape.sigma2_im = masked_exp(*dropout.variational->log_var_imag, tape.support);
        }
    } else if (tape.dropout == DropoutKind::gaussian) {
        const double s2 = std::exp(dropout.gaussian_log_var);
        tape.sigma2_re = constant_on_support(fb.n_bins(), tape.l_max, s2, tape.support);
        if (!hilbert) {
            tape.sigma2_im = tape.sigma2_re;
        }
    }

    std::vector<FeatureMap> logs;
    logs.reserve(batch.size());
    tape.items.resize(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        batch[b].validate();
        auto& item = tape.items[b];
        item.signal = batch[b].samples;
        item.re = strided_response(item.signal, tape.eff_real, tape.hop, tape.support);
        item.im = strided_response(item.signal, tape.eff_imag, tape.hop,
                                   hilbert ? std::span<const RowSupport>(kNoSupport) : tape.support);
        if (tape.sigma2_re || tape.sigma2_im) {
            const auto x2 = squared(item.signal);
            Rng noise_rng = root.stream(1 + b);
            if (tape.sigma2_re) {
                const Matrix v = strided_response(x2, *tape.sigma2_re, tape.hop, tape.support);
                add_noise(item.re, v, noise_rng, item.noise_re, item.sd_re);
            }
            if (tape.sigma2_im) {
                const Matrix v = strided_response(x2, *tape.sigma2_im, tape.hop, tape.support);
                add_noise(item.im, v, noise_rng, item.noise_im, item.sd_im);
            }
        }
        item.magnitude = l2_pool(item.re, item.im);
        logs.push_back(log_compress({item.magnitude, FeatureKind::magnitude, tape.hop, batch[b].rate}));
    }

    result.features = batch_norm(logs, bn, mode, mode == Mode::train ? &tape.batch_stats : nullptr);
    const auto& mean = mode == Mode::train ? tape.batch_stats.mean : bn.running_mean;
    const auto& var = mode == Mode::train ? tape.batch_stats.var : bn.running_var;
    tape.inv_std.resize(fb.n_bins());
    for (std::size_t mu = 0; mu < fb.n_bins(); ++mu) {
        tape.inv_std[mu] = 1.0 / std::sqrt(var[mu] + bn.epsilon);
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
        Matrix xhat = logs[b].values;
        for (std::size_t mu = 0; mu < xhat.rows(); ++mu) {
            for (double& v : xhat.row(mu)) {
                v = (v - mean[mu]) * tape.inv_std[mu];
            }
        }
        tape.items[b].normalized_in = std::move(xhat);
    }
    return result;
}

FrontendGradients frontend_backward(const FrontendTape& tape, std::span<const Matrix> d_out)
{
    if (d_out.size() != tape.items.size()) {
        throw std::invalid_argument("frontend_backward: batch size mismatch");
    }
    const std::size_t bins = tape.eff_real.rows();
    for (std::size_t b = 0; b < d_out.size(); ++b) {
        if (!d_out[b].same_shape(tape.items[b].magnitude)) {
            throw std::invalid_argument("frontend_backward: gradient shape mismatch");
        }
    }
    const bool hilbert = tape.variant == Variant::hilbert;

    FrontendGradients g;
    g.d_real = Matrix(bins, tape.l_max);
    Matrix d_imag_eff(bins, tape.l_max);
    g.d_bn_scale.assign(bins, 0.0);
    g.d_bn_shift.assign(bins, 0.0);
    std::optional<Matrix> d_sigma2_re, d_sigma2_im;
    if (tape.dropout == DropoutKind::variational) {
        d_sigma2_re = Matrix(bins, tape.l_max);
        if (tape.sigma2_im) {
            d_sigma2_im = Matrix(bins, tape.l_max);
        }
    }

    // Batch norm: dscale, dshift and the pooled sums needed in train mode.
    std::vector<double> sum_dxhat(bins, 0.0), sum_dxhat_xhat(bins, 0.0);
    for (std::size_t b = 0; b < d_out.size(); ++b) {
        const Matrix& xhat = tape.items[b].normalized_in;
        for (std::size_t mu = 0; mu < bins; ++mu) {
            const auto dy = d_out[b].row(mu);
            const auto xh = xhat.row(mu);
            for (std::size_t k = 0; k < dy.size(); ++k) {
                g.d_bn_scale[mu] += dy[k] * xh[k];
                g.d_bn_shift[mu] += dy[k];
                const double dxh = dy[k] * tape.bn_scale[mu];
                sum_dxhat[mu] += dxh;
                sum_dxhat_xhat[mu] += dxh * xh[k];
            }
        }
    }
    const double count = static_cast<double>(tape.batch_stats.count);

    for (std::size_t b = 0; b < d_out.size(); ++b) {
        const auto& item = tape.items[b];
        const std::size_t frames = item.magnitude.cols();
        Matrix d_re(bins, frames), d_im(bins, frames);
        for (std::size_t mu = 0; mu < bins; ++mu) {
            for (std::size_t k = 0; k < frames; ++k) {
                const double dxh = d_out[b](mu, k) * tape.bn_scale[mu];
                double d_log = 0.0;
                if (tape.mode == Mode::train) {
                    d_log = tape.inv_std[mu] / count *
                            (count * dxh - sum_dxhat[mu] - item.normalized_in(mu, k) * sum_dxhat_xhat[mu]);
                } else {
                    d_log = dxh * tape.inv_std[mu];
                }
                const double mag = item.magnitude(mu, k);
                const double d_mag = d_log / (mag + kLogEpsilon);
                if (mag > 0.0) {
                    d_re(mu, k) = d_mag * item.re(mu, k) / mag;
                    d_im(mu, k) = d_mag * item.im(mu, k) / mag;
                }
            }
        }

        if (d_sigma2_re) {
            const auto x2 = squared(item.signal);
            auto variance_grad = [&](const Matrix& d_resp, const Matrix& noise, const Matrix& sd) {
                Matrix dv(bins, frames);
                for (std::size_t i = 0; i < dv.size(); ++i) {
                    const double s = sd.flat()[i];
                    if (s > 0.0) {
                        dv.flat()[i] = d_resp.flat()[i] * noise.flat()[i] / (2.0 * s);
                    }
                }
                return strided_weight_gradient(x2, dv, tape.hop, tape.l_max, tape.support);
            };
            if (d_sigma2_re && item.sd_re) {
                accumulate(*d_sigma2_re, variance_grad(d_re, *item.noise_re, *item.sd_re));
            }
            if (d_sigma2_im && item.sd_im) {
                accumulate(*d_sigma2_im, variance_grad(d_im, *item.noise_im, *item.sd_im));
            }
        }

        accumulate(g.d_real, strided_weight_gradient(item.signal, d_re, tape.hop, tape.l_max, tape.support));
        if (hilbert) {
            accumulate(d_imag_eff, strided_weight_gradient(item.signal, d_im, tape.hop, tape.l_max));
        } else {
            accumulate(d_imag_eff, strided_weight_gradient(item.signal, d_im, tape.hop, tape.l_max, tape.support));
        }
    }

    if (hilbert) {
        // imag = H(real) with H antisymmetric, so H^T d = -H(d).
        const Matrix h = hilbert_rows(d_imag_eff);
        for (std::size_t i = 0; i < h.size(); ++i) {
            g.d_real.flat()[i] -= h.flat()[i];
        }
        mask_to_support(g.d_real, tape.support);
    } else {
        g.d_imag = std::move(d_imag_eff);
    }

    if (tape.drop_scale_re) {
        auto d = g.d_real.flat();
        const auto s = tape.drop_scale_re->flat();
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] *= s[i];
        }
    }
    if (tape.drop_scale_im && g.d_imag) {
        auto d = g.d_imag->flat();
        const auto s = tape.drop_scale_im->flat();
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] *= s[i];
        }
    }

    auto to_log_var = [](const Matrix& d_sigma2, const Matrix& sigma2) {
        Matrix out(d_sigma2.rows(), d_sigma2.cols());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out.flat()[i] = d_sigma2.flat()[i] * sigma2.flat()[i];
        }
        return out;
    };
    if (d_sigma2_re) {
        g.d_log_var = to_log_var(*d_sigma2_re, *tape.sigma2_re);
    }
    if (d_sigma2_im) {
        g.d_log_var_imag = to_log_var(*d_sigma2_im, *tape.sigma2_im);
    }
    return g;
}

} // namespace afb
