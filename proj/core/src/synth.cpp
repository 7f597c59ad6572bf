#include "afb/error.hpp"
#include "afb/response.hpp"
#include "afb/train.hpp"

#include <algorithm>
#include <complex>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace afb {

std::size_t BoolMatrix::count() const
{
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

double SynthSpec::fundamental(std::size_t pitch) const
{
    const double midi = lowest_midi + static_cast<double>(pitch);
    return 440.0 * std::exp2((midi - 69.0) / 12.0);
}

void SynthSpec::validate() const
{
    if (rate <= 0 || hop < 1 || !(duration > 0.0)) {
        throw std::invalid_argument("synth: rate, hop and duration must be positive");
    }
    if (n_pitches < 1 || n_harmonics < 1) {
        throw std::invalid_argument("synth: need at least one pitch and one harmonic");
    }
    if (!(min_note > 0.0) || max_note < min_note || !(min_decay > 0.0) || max_decay < min_decay ||
        min_inharmonicity < 0.0 || max_inharmonicity < min_inharmonicity || max_amplitude < min_amplitude ||
        note_rate < 0.0) {
        throw std::invalid_argument("synth: inconsistent parameter ranges");
    }
    const double f0 = fundamental(n_pitches - 1);
    const double h = static_cast<double>(n_harmonics);
    const double top = h * f0 * std::sqrt(1.0 + max_inharmonicity * h * h);
    if (top >= rate / 2.0) {
        throw std::invalid_argument("synth: highest partial reaches Nyquist");
    }
}

namespace {

double frame_time(std::size_t k, const SynthSpec& spec)
{
    return static_cast<double>(k * spec.hop) / spec.rate;
}

} // namespace

LabeledClip render_notes(const SynthSpec& spec, std::span<const NoteEvent> notes, Rng& rng)
{
    spec.validate();
    const std::size_t n_samples = static_cast<std::size_t>(std::llround(spec.duration * spec.rate));
    LabeledClip clip;
    clip.signal.rate = spec.rate;
    clip.signal.samples.assign(n_samples, 0.0);
    clip.notes.assign(notes.begin(), notes.end());
    const std::size_t frames = frame_count(n_samples, spec.hop);
    clip.labels = BoolMatrix(spec.n_pitches, frames);

    for (const NoteEvent& note : notes) {
        if (note.pitch >= spec.n_pitches) {
            throw std::invalid_argument("synth: pitch index out of range");
        }
        const double f0 = spec.fundamental(note.pitch);
        const auto first = static_cast<std::size_t>(std::ceil(note.onset * spec.rate));
        const auto last = std::min(n_samples, static_cast<std::size_t>(std::ceil(note.offset * spec.rate)));
        if (first >= last) {
            continue;
        }
        std::vector<double> envelope(last - first);
        for (std::size_t i = first; i < last; ++i) {
            const double t = static_cast<double>(i) / spec.rate - note.onset;
            envelope[i - first] = note.amplitude * std::exp(-t / note.decay);
        }
        const double t0 = static_cast<double>(first) / spec.rate - note.onset;
        for (std::size_t h = 1; h <= spec.n_harmonics; ++h) {
            const double hd = static_cast<double>(h);
            const double freq = hd * f0 * std::sqrt(1.0 + note.inharmonicity * hd * hd);
            const double amp = std::pow(10.0, -spec.rolloff_db * (hd - 1.0) / 20.0);
            const double phase = 2.0 * std::numbers::pi * rng.uniform();
            const double w = 2.0 * std::numbers::pi * freq;
            // Phasor recurrence; re-anchored every block to bound drift.
            const std::complex<double> rot = std::polar(1.0, w / spec.rate);
            std::complex<double> z;
            for (std::size_t i = first; i < last; ++i) {
                const std::size_t j = i - first;
                if (j % 4096 == 0) {
                    z = std::polar(1.0, w * (t0 + static_cast<double>(j) / spec.rate) + phase);
                }
                clip.signal.samples[i] += amp * envelope[j] * z.imag();
                z *= rot;
            }
        }
        const double audible_until = std::min(note.offset, note.onset + note.decay * std::log(1.0 / kLabelFloor));
        for (std::size_t k = 0; k < frames; ++k) {
            const double t = frame_time(k, spec);
            if (t >= note.onset && t < audible_until) {
                clip.labels.set(note.pitch, k, true);
            }
        }
    }
    if (std::isfinite(spec.noise_floor_db)) {
        const double sd = std::pow(10.0, spec.noise_floor_db / 20.0);
        for (double& s : clip.signal.samples) {
            s += sd * rng.normal();
        }
    }
    return clip;
}

LabeledClip synth_clip(const SynthSpec& spec, Rng& rng)
{
    spec.validate();
    std::vector<NoteEvent> notes;
    if (spec.max_polyphony > 0 && spec.note_rate > 0.0) {
        double t = -std::log(1.0 - rng.uniform()) / spec.note_rate;
        while (t < spec.duration) {
            std::vector<std::size_t> free;
            std::size_t sounding = 0;
            for (std::size_t p = 0; p < spec.n_pitches; ++p) {
                const bool busy = std::any_of(notes.begin(), notes.end(), [&](const NoteEvent& n) {
                    return n.pitch == p && n.onset <= t && t < n.offset;
                });
                sounding += busy;
                if (!busy) {
                    free.push_back(p);
                }
            }
            if (sounding < spec.max_polyphony && !free.empty()) {
                NoteEvent n;
                n.pitch = free[static_cast<std::size_t>(rng.uniform() * static_cast<double>(free.size())) % free.size()];
                n.onset = t;
                n.offset = std::min(spec.duration, t + rng.uniform(spec.min_note, spec.max_note));
                n.decay = rng.uniform(spec.min_decay, spec.max_decay);
                n.inharmonicity = rng.uniform(spec.min_inharmonicity, spec.max_inharmonicity);
                n.amplitude = rng.uniform(spec.min_amplitude, spec.max_amplitude);
                notes.push_back(n);
            }
            t += -std::log(1.0 - rng.uniform()) / spec.note_rate;
        }
    }
    return render_notes(spec, notes, rng);
}

SalienceHead SalienceHead::init(std::size_t n_pitches, std::size_t n_bins, Rng& rng, double scale)
{
    SalienceHead h{Matrix(n_pitches, n_bins), std::vector<double>(n_pitches, 0.0)};
    for (double& w : h.weight.flat()) {
        w = scale * rng.normal();
    }
    return h;
}

Matrix SalienceHead::forward(const Matrix& features) const
{
    if (features.rows() != weight.cols()) {
        throw std::invalid_argument("salience head: feature bins differ from head width");
    }
    const std::size_t frames = features.cols();
    Matrix logits(weight.rows(), frames);
    for (std::size_t p = 0; p < weight.rows(); ++p) {
        auto out = logits.row(p);
        std::fill(out.begin(), out.end(), bias[p]);
        for (std::size_t mu = 0; mu < weight.cols(); ++mu) {
            const double w = weight(p, mu);
            const auto f = features.row(mu);
            for (std::size_t k = 0; k < frames; ++k) {
                out[k] += w * f[k];
            }
        }
    }
    return logits;
}

Matrix SalienceHead::backward(const Matrix& features, const Matrix& d_logits, Grad& grad) const
{
    if (grad.d_weight.empty()) {
        grad.d_weight = Matrix(weight.rows(), weight.cols());
        grad.d_bias.assign(bias.size(), 0.0);
    }
    const std::size_t frames = features.cols();
    Matrix d_features(features.rows(), frames);
    for (std::size_t p = 0; p < weight.rows(); ++p) {
        const auto dl = d_logits.row(p);
        for (std::size_t k = 0; k < frames; ++k) {
            grad.d_bias[p] += dl[k];
        }
        for (std::size_t mu = 0; mu < weight.cols(); ++mu) {
            const auto f = features.row(mu);
            auto df = d_features.row(mu);
            const double w = weight(p, mu);
            double acc = 0.0;
            for (std::size_t k = 0; k < frames; ++k) {
                acc += dl[k] * f[k];
                df[k] += w * dl[k];
            }
            grad.d_weight(p, mu) += acc;
        }
    }
    return d_features;
}

LossResult bce_loss(std::span<const Matrix> logits, std::span<const BoolMatrix> labels)
{
    if (logits.size() != labels.size()) {
        throw std::invalid_argument("bce_loss: batch size mismatch");
    }
    std::size_t count = 0;
    for (std::size_t b = 0; b < logits.size(); ++b) {
        if (logits[b].rows() != labels[b].rows || logits[b].cols() != labels[b].cols) {
            throw std::invalid_argument("bce_loss: shape mismatch");
        }
        count += logits[b].size();
    }
    LossResult out;
    if (count == 0) {
        return out;
    }
    const double inv = 1.0 / static_cast<double>(count);
    double total = 0.0;
    for (std::size_t b = 0; b < logits.size(); ++b) {
        Matrix d(logits[b].rows(), logits[b].cols());
        const auto z = logits[b].flat();
        auto dz = d.flat();
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double y = labels[b].data[i] ? 1.0 : 0.0;
            total += std::max(z[i], 0.0) - z[i] * y + std::log1p(std::exp(-std::abs(z[i])));
            const double s = z[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-z[i])) : std::exp(z[i]) / (1.0 + std::exp(z[i]));
            dz[i] = (s - y) * inv;
        }
        out.d_logits.push_back(std::move(d));
    }
    out.value = total * inv;
    return out;
}

LossResult bce_loss(const Matrix& logits, const BoolMatrix& labels)
{
    return bce_loss(std::span<const Matrix>(&logits, 1), std::span<const BoolMatrix>(&labels, 1));
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr)
{
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adam_step: parameter/gradient size mismatch");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) {
            throw Error(Errc::non_finite, "adam_step: non-finite gradient");
        }
    }
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size()) {
        throw std::invalid_argument("adam_step: optimizer state size mismatch");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
}

namespace {

FrameMetrics finish(std::size_t tp, std::size_t fp, std::size_t fn)
{
    FrameMetrics m;
    m.true_positives = tp;
    m.false_positives = fp;
    m.false_negatives = fn;
    m.precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.recall = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double s = m.precision + m.recall;
    m.f1 = s == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / s;
    return m;
}

} // namespace

FrameMetrics frame_metrics(std::span<const BoolMatrix> pred, std::span<const BoolMatrix> truth)
{
    if (pred.size() != truth.size()) {
        throw std::invalid_argument("frame_metrics: batch size mismatch");
    }
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t b = 0; b < pred.size(); ++b) {
        if (pred[b].rows != truth[b].rows || pred[b].cols != truth[b].cols) {
            throw std::invalid_argument("frame_metrics: shape mismatch");
        }
        for (std::size_t i = 0; i < pred[b].data.size(); ++i) {
            const bool p = pred[b].data[i] != 0;
            const bool t = truth[b].data[i] != 0;
            tp += p && t;
            fp += p && !t;
            fn += !p && t;
        }
    }
    return finish(tp, fp, fn);
}

FrameMetrics frame_metrics(const BoolMatrix& pred, const BoolMatrix& truth)
{
    return frame_metrics(std::span<const BoolMatrix>(&pred, 1), std::span<const BoolMatrix>(&truth, 1));
}

BoolMatrix threshold_logits(const Matrix& logits, double probability_threshold)
{
    const double cut = std::log(probability_threshold / (1.0 - probability_threshold));
    BoolMatrix out(logits.rows(), logits.cols());
    const auto z = logits.flat();
    for (std::size_t i = 0; i < z.size(); ++i) {
        out.data[i] = z[i] > cut ? 1 : 0;
    }
    return out;
}

} // namespace afb
