#include "afb/train.hpp"
#include "objective.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

namespace afb {

namespace {

// Ridders' extrapolation of central differences over a shrinking step.
template <class F>
double ridders_derivative(F&& f, double h0)
{
    constexpr int kTable = 10;
    constexpr double kShrink = 1.6;
    constexpr double kShrink2 = kShrink * kShrink;
    double a[kTable][kTable];
    double h = h0;
    a[0][0] = (f(h) - f(-h)) / (2.0 * h);
    double best = a[0][0];
    double err = std::numeric_limits<double>::max();
    for (int i = 1; i < kTable; ++i) {
        h /= kShrink;
        a[0][i] = (f(h) - f(-h)) / (2.0 * h);
        double fac = kShrink2;
        for (int j = 1; j <= i; ++j) {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= kShrink2;
            const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
            if (e <= err) {
                err = e;
                best = a[j][i];
            }
        }
        if (i >= 4 && std::abs(a[i][i] - a[i - 1][i - 1]) >= 2.0 * err) {
            break;
        }
    }
    return best;
}

struct Coordinate {
    std::string group;
    std::function<double&(detail::Model&)> ref;
    double analytic = 0.0;
    // Lower bound on the starting step; weights near zero need a step below |w|.
    double step_floor = 1e-1;
};

detail::Model tiny_model(Variant variant, const GradCheckConfig& cfg, Rng& rng)
{
    FilterbankSpec spec;
    spec.rate = 16000;
    spec.f_min = 220.0;
    spec.n_bins = cfg.n_filters;
    spec.n_bpo = 12;
    spec.hop = 512;
    spec.variant = variant;
    spec.init = InitKind::vqt;

    detail::Model m;
    m.fb = vqt_weights(spec);
    auto perturb = [&](Matrix& w) {
        for (std::size_t mu = 0; mu < w.rows(); ++mu) {
            const RowSupport s = m.fb.support(mu);
            for (std::size_t n = s.begin; n < s.end; ++n) {
                w(mu, n) += 0.05 * rng.normal();
            }
        }
    };
    perturb(m.fb.real);
    if (m.fb.imag) {
        perturb(*m.fb.imag);
    }
    m.bn = BatchNormState::identity(spec.n_bins);
    for (std::size_t mu = 0; mu < spec.n_bins; ++mu) {
        m.bn.scale[mu] = 1.0 + 0.2 * rng.normal();
        m.bn.shift[mu] = 0.2 * rng.normal();
    }
    m.var = VarDropoutState::for_bank(m.fb, -4.0, 0.01, cfg.seed);
    if (variant == Variant::fixed) {
        m.var->log_var_imag.reset();
    }
    auto randomize = [&](Matrix& lv) {
        for (std::size_t mu = 0; mu < lv.rows(); ++mu) {
            const RowSupport s = m.fb.support(mu);
            for (std::size_t n = s.begin; n < s.end; ++n) {
                lv(mu, n) = rng.uniform(-6.0, -2.0);
            }
        }
    };
    randomize(m.var->log_var);
    if (m.var->log_var_imag) {
        randomize(*m.var->log_var_imag);
    }
    return m;
}

} // namespace

std::vector<std::string> GradCheckReport::groups_covered() const
{
    std::set<std::string> g;
    for (const auto& e : entries) {
        g.insert(e.group);
    }
    return {g.begin(), g.end()};
}

GradCheckReport gradient_check(const GradCheckConfig& cfg)
{
    GradCheckReport report;
    Rng root(cfg.seed);

    SynthSpec synth;
    synth.duration = cfg.duration;
    synth.noise_floor_db = -50.0;
    std::vector<RealSignal> signals;
    std::vector<BoolMatrix> labels;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        Rng r = root.stream(1000 + b);
        LabeledClip clip = synth_clip(synth, r);
        signals.push_back(clip.signal);
        labels.push_back(clip.labels);
    }

    const Variant variants[] = {Variant::classic, Variant::hilbert, Variant::fixed};
    const DropoutKind dropouts[] = {DropoutKind::none, DropoutKind::bernoulli, DropoutKind::gaussian,
                                    DropoutKind::variational};
    std::uint64_t case_index = 0;
    for (Variant variant : variants) {
        for (DropoutKind dropout : dropouts) {
            ++case_index;
            Rng rng = root.stream(case_index);
            detail::Model model = tiny_model(variant, cfg, rng);
            Rng head_rng = rng.stream(7);
            model.head = SalienceHead::init(synth.n_pitches, model.fb.n_bins(), head_rng, 0.3);
            for (double& b : model.head.bias) {
                b = 0.5 * head_rng.normal();
            }
            if (dropout != DropoutKind::variational) {
                model.var.reset();
            }
            const std::uint64_t noise_seed = Rng::mix(cfg.seed + case_index);
            const std::string case_id = to_string(variant) + "+" + to_string(dropout);

            auto loss_of = [&](const detail::Model& m) {
                const DropoutSettings d = detail::dropout_settings(m, dropout, 0.1, -6.0, noise_seed);
                return detail::objective(m, signals, labels, d, Mode::train, false).total();
            };
            const DropoutSettings d = detail::dropout_settings(model, dropout, 0.1, -6.0, noise_seed);
            const detail::ObjectiveResult grad = detail::objective(model, signals, labels, d, Mode::train, true);

            std::vector<std::vector<Coordinate>> groups;
            auto weight_group = [&](const std::string& name, auto accessor, const Matrix& g,
                                    const Matrix* extra) {
                std::vector<Coordinate> coords;
                for (std::size_t mu = 0; mu < model.fb.n_bins(); ++mu) {
                    const RowSupport s = model.fb.support(mu);
                    for (std::size_t n = s.begin; n < s.end; ++n) {
                        const double a = g(mu, n) + (extra ? (*extra)(mu, n) : 0.0);
                        coords.push_back({name,
                                          [accessor, mu, n](detail::Model& m) -> double& { return accessor(m)(mu, n); },
                                          a, 1e-6});
                    }
                }
                groups.push_back(std::move(coords));
            };
            weight_group(
                "real", [](detail::Model& m) -> Matrix& { return m.fb.real; }, grad.frontend.d_real,
                grad.kl_real ? &grad.kl_real->d_weights : nullptr);
            if (model.fb.imag) {
                weight_group(
                    "imag", [](detail::Model& m) -> Matrix& { return *m.fb.imag; }, *grad.frontend.d_imag,
                    grad.kl_imag ? &grad.kl_imag->d_weights : nullptr);
            }
            if (model.var) {
                weight_group(
                    "log_var", [](detail::Model& m) -> Matrix& { return m.var->log_var; }, *grad.frontend.d_log_var,
                    &grad.kl_real->d_log_var);
                if (model.var->log_var_imag) {
                    weight_group(
                        "log_var_imag", [](detail::Model& m) -> Matrix& { return *m.var->log_var_imag; },
                        *grad.frontend.d_log_var_imag, &grad.kl_imag->d_log_var);
                }
            }
            {
                std::vector<Coordinate> scale, shift, bias, weight;
                for (std::size_t mu = 0; mu < model.fb.n_bins(); ++mu) {
                    scale.push_back({"bn_scale", [mu](detail::Model& m) -> double& { return m.bn.scale[mu]; },
                                     grad.frontend.d_bn_scale[mu]});
                    shift.push_back({"bn_shift", [mu](detail::Model& m) -> double& { return m.bn.shift[mu]; },
                                     grad.frontend.d_bn_shift[mu]});
                }
                for (std::size_t p = 0; p < model.head.weight.rows(); ++p) {
                    bias.push_back({"head_bias", [p](detail::Model& m) -> double& { return m.head.bias[p]; },
                                    grad.head.d_bias[p]});
                    for (std::size_t mu = 0; mu < model.head.weight.cols(); ++mu) {
                        weight.push_back({"head_weight",
                                          [p, mu](detail::Model& m) -> double& { return m.head.weight(p, mu); },
                                          grad.head.d_weight(p, mu)});
                    }
                }
                groups.push_back(std::move(scale));
                groups.push_back(std::move(shift));
                groups.push_back(std::move(bias));
                groups.push_back(std::move(weight));
            }

            for (std::size_t i = 0; i < cfg.samples_per_case; ++i) {
                const auto& group = groups[i % groups.size()];
                const Coordinate& c = group[static_cast<std::size_t>(rng.next() % group.size())];
                auto at = [&](double offset) {
                    detail::Model m = model;
                    c.ref(m) += offset;
                    return loss_of(m);
                };
                detail::Model probe = model;
                const double h0 = cfg.step * std::max(std::abs(c.ref(probe)), c.step_floor);
                const double numeric = ridders_derivative(at, h0);
                const double denom = std::max({std::abs(c.analytic), std::abs(numeric), cfg.absolute_floor});
                const double rel = std::abs(c.analytic - numeric) / denom;
                report.entries.push_back({case_id, c.group, c.analytic, numeric, rel});
                report.max_rel_error = std::max(report.max_rel_error, rel);
            }
        }
    }
    return report;
}

} // namespace afb
