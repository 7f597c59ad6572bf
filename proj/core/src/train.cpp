#include "afb/train.hpp"
#include "afb/error.hpp"
#include "objective.hpp"

#include "json.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace afb {

namespace detail {

DropoutSettings dropout_settings(const Model& model, DropoutKind kind, double bernoulli_rate, double gaussian_log_var,
                                 std::uint64_t seed)
{
    DropoutSettings d;
    d.kind = kind;
    d.bernoulli_rate = bernoulli_rate;
    d.gaussian_log_var = gaussian_log_var;
    d.variational = model.var ? &*model.var : nullptr;
    d.seed = seed;
    return d;
}

ObjectiveResult objective(const Model& model, std::span<const RealSignal> signals, std::span<const BoolMatrix> labels,
                          const DropoutSettings& dropout, Mode mode, bool with_gradients)
{
    ObjectiveResult out;
    ForwardResult fwd = frontend_forward(signals, model.fb, model.bn, dropout, mode);
    out.stats = fwd.tape.batch_stats;
    std::vector<Matrix> logits;
    logits.reserve(signals.size());
    for (const auto& f : fwd.features) {
        logits.push_back(model.head.forward(f.values));
    }
    LossResult loss = bce_loss(logits, labels);
    out.bce = loss.value;

    const bool variational = dropout.kind == DropoutKind::variational && model.var;
    if (variational) {
        const auto support = model.fb.supports();
        out.kl_real = kl_penalty(model.fb.real, model.var->log_var, model.var->kl_scale, support);
        out.kl = out.kl_real->value;
        if (model.var->log_var_imag && model.fb.imag) {
            out.kl_imag = kl_penalty(*model.fb.imag, *model.var->log_var_imag, model.var->kl_scale, support);
            out.kl += out.kl_imag->value;
        }
    }
    if (!with_gradients) {
        return out;
    }
    std::vector<Matrix> d_features;
    d_features.reserve(signals.size());
    for (std::size_t b = 0; b < signals.size(); ++b) {
        d_features.push_back(model.head.backward(fwd.features[b].values, loss.d_logits[b], out.head));
    }
    out.frontend = frontend_backward(fwd.tape, d_features);
    return out;
}

} // namespace detail

namespace {

constexpr std::uint64_t kEvalStreamBase = 1ULL << 40;

void add_into(Matrix& a, const Matrix& b)
{
    for (std::size_t i = 0; i < a.size(); ++i) {
        a.flat()[i] += b.flat()[i];
    }
}

struct Trainer {
    const TrainConfig& cfg;
    Experiment exp;
    detail::Model model;
    AdamState head_w, head_b, bn_scale, bn_shift, real, imag, log_var, log_var_imag;

    explicit Trainer(const TrainConfig& c) : cfg(c), exp(Experiment::parse(c.experiment))
    {
        FilterbankSpec spec = cfg.bank;
        spec.variant = exp.variant;
        spec.init = exp.init;
        spec.seed = cfg.init_seed;
        model.fb = design_filterbank(spec);
        model.bn = BatchNormState(model.fb.n_bins());
        if (exp.dropout == DropoutKind::variational) {
            model.var = VarDropoutState::for_bank(model.fb, cfg.log_var_init, cfg.resolved_kl_scale(), cfg.seed);
        }
        Rng head_rng = Rng(cfg.init_seed).stream(99);
        model.head = SalienceHead::init(cfg.synth.n_pitches, model.fb.n_bins(), head_rng);
        for (AdamState* s : {&head_w, &head_b, &bn_scale, &bn_shift, &real, &imag, &log_var, &log_var_imag}) {
            s->beta1 = cfg.beta1;
            s->beta2 = cfg.beta2;
            s->epsilon = cfg.adam_epsilon;
        }
    }

    std::vector<LabeledClip> training_batch(std::size_t step) const
    {
        Rng root(cfg.seed);
        std::vector<LabeledClip> clips;
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            Rng r = root.stream(step * cfg.batch_size + i);
            clips.push_back(synth_clip(cfg.synth, r));
        }
        return clips;
    }

    DropoutSettings dropout_for(std::size_t step, DropoutKind kind) const
    {
        return detail::dropout_settings(model, kind, cfg.bernoulli_rate, cfg.gaussian_log_var,
                                        Rng::mix(cfg.seed ^ Rng::mix(0xd509 + step)));
    }

    // Seeds the running statistics from a noise-free pass over one batch.
    void calibrate_batch_norm(std::span<const RealSignal> signals)
    {
        ForwardResult fwd = frontend_forward(signals, model.fb, model.bn, DropoutSettings{}, Mode::train);
        update_running_stats(model.bn, fwd.tape.batch_stats);
    }

    /// Returns the training objective of this step.
    double step(std::size_t step_index, std::span<const RealSignal> signals, std::span<const BoolMatrix> labels)
    {
        const DropoutSettings d = dropout_for(step_index, exp.dropout);
        detail::ObjectiveResult r = detail::objective(model, signals, labels, d, Mode::train, true);
        if (!std::isfinite(r.total())) {
            throw Error(Errc::divergence, "loss is not finite");
        }
        const double filter_lr = cfg.filter_lr.value_or(cfg.lr);
        adam_step(model.head.weight.flat(), r.head.d_weight.flat(), head_w, cfg.lr);
        adam_step(model.head.bias, r.head.d_bias, head_b, cfg.lr);
        adam_step(model.bn.scale, r.frontend.d_bn_scale, bn_scale, cfg.lr);
        adam_step(model.bn.shift, r.frontend.d_bn_shift, bn_shift, cfg.lr);
        if (exp.trains_filters()) {
            Matrix d_real = r.frontend.d_real;
            if (r.kl_real) {
                add_into(d_real, r.kl_real->d_weights);
            }
            adam_step(model.fb.real.flat(), d_real.flat(), real, filter_lr);
            if (model.fb.imag && r.frontend.d_imag) {
                Matrix d_imag = *r.frontend.d_imag;
                if (r.kl_imag) {
                    add_into(d_imag, r.kl_imag->d_weights);
                }
                adam_step(model.fb.imag->flat(), d_imag.flat(), imag, filter_lr);
            }
        }
        if (model.var) {
            Matrix d = r.frontend.d_log_var ? *r.frontend.d_log_var : Matrix(model.fb.n_bins(), model.fb.receptive_field());
            if (r.kl_real) {
                add_into(d, r.kl_real->d_log_var);
            }
            adam_step(model.var->log_var.flat(), d.flat(), log_var, filter_lr);
            if (model.var->log_var_imag) {
                Matrix di = r.frontend.d_log_var_imag ? *r.frontend.d_log_var_imag
                                                      : Matrix(model.fb.n_bins(), model.fb.receptive_field());
                if (r.kl_imag) {
                    add_into(di, r.kl_imag->d_log_var);
                }
                adam_step(model.var->log_var_imag->flat(), di.flat(), log_var_imag, filter_lr);
            }
        }
        update_running_stats(model.bn, r.stats);
        return r.total();
    }

    double kl_value() const
    {
        if (!model.var) {
            return 0.0;
        }
        const auto support = model.fb.supports();
        double kl = kl_penalty(model.fb.real, model.var->log_var, model.var->kl_scale, support).value;
        if (model.var->log_var_imag && model.fb.imag) {
            kl += kl_penalty(*model.fb.imag, *model.var->log_var_imag, model.var->kl_scale, support).value;
        }
        return kl;
    }

    ReportRecord record(std::size_t step_index, std::span<const LabeledClip> eval) const
    {
        const Evaluation e = evaluate(model.fb, model.bn, model.head, eval, cfg.decision_threshold);
        ReportRecord r;
        r.step = step_index;
        r.loss = e.loss;
        r.kl = kl_value();
        r.precision = e.metrics.precision;
        r.recall = e.metrics.recall;
        r.f1 = e.metrics.f1;
        r.sparsity = model.var ? prunable_fraction(model.fb, *model.var, cfg.prune_threshold) : 0.0;
        return r;
    }
};

std::vector<RealSignal> signals_of(std::span<const LabeledClip> clips)
{
    std::vector<RealSignal> out;
    for (const auto& c : clips) {
        out.push_back(c.signal);
    }
    return out;
}

std::vector<BoolMatrix> labels_of(std::span<const LabeledClip> clips)
{
    std::vector<BoolMatrix> out;
    for (const auto& c : clips) {
        out.push_back(c.labels);
    }
    return out;
}

} // namespace

Experiment Experiment::parse(const std::string& id)
{
    std::vector<std::string> parts;
    std::stringstream ss(id);
    for (std::string p; std::getline(ss, p, '+');) {
        parts.push_back(p);
    }
    Experiment e;
    if (parts.size() == 1) {
        e.variant = Variant::fixed;
        e.init = parse_init(parts[0]);
        return e;
    }
    if (parts.size() < 2 || parts.size() > 3) {
        throw std::invalid_argument("experiment id must look like variant+init[+dropout]: '" + id + "'");
    }
    e.variant = parse_variant(parts[0]);
    e.init = parse_init(parts[1]);
    if (parts.size() == 3) {
        e.dropout = parse_dropout(parts[2]);
    }
    return e;
}

std::string Experiment::id() const
{
    std::string v = variant == Variant::classic ? "cl" : variant == Variant::hilbert ? "hb" : "fixed";
    std::string i = init == InitKind::random ? "rnd" : to_string(init);
    std::string out = v + "+" + i;
    if (dropout != DropoutKind::none) {
        out += "+" + to_string(dropout);
    }
    return out;
}

FilterbankSpec TrainConfig::desk_bank()
{
    FilterbankSpec s;
    s.rate = 16000;
    s.f_min = 65.40639132514966;
    s.n_bins = 48;
    s.n_bpo = 12;
    s.gamma.reset();
    s.hop = 512;
    return s;
}

void TrainConfig::validate() const
{
    const Experiment e = Experiment::parse(experiment);
    if (batch_size < 1 || eval_every < 1 || eval_clips < 1) {
        throw std::invalid_argument("train config: batch_size, eval_every and eval_clips must be positive");
    }
    if (!(lr > 0.0) || (filter_lr && !(*filter_lr > 0.0))) {
        throw std::invalid_argument("train config: learning rates must be positive");
    }
    if (kl_scale && *kl_scale != 0.0 && e.dropout != DropoutKind::variational) {
        throw std::invalid_argument("train config: kl_scale must be 0 unless dropout is variational");
    }
    if (kl_scale && *kl_scale < 0.0) {
        throw std::invalid_argument("train config: kl_scale must be >= 0");
    }
    if (!(bernoulli_rate >= 0.0 && bernoulli_rate < 1.0)) {
        throw std::invalid_argument("train config: bernoulli_rate must lie in [0, 1)");
    }
    if (!(decision_threshold > 0.0 && decision_threshold < 1.0)) {
        throw std::invalid_argument("train config: decision_threshold must lie in (0, 1)");
    }
    if (synth.rate != bank.rate || synth.hop != bank.hop) {
        throw std::invalid_argument("train config: synth rate/hop must match the filterbank");
    }
    synth.validate();
    FilterbankSpec s = bank;
    s.variant = e.variant;
    s.init = e.init;
    s.validate();
}

double TrainConfig::resolved_kl_scale() const
{
    if (kl_scale) {
        return *kl_scale;
    }
    return Experiment::parse(experiment).dropout == DropoutKind::variational ? 0.01 : 0.0;
}

std::string TrainReport::to_jsonl() const
{
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["step"] = r.step;
        j["loss"] = r.loss;
        j["kl"] = r.kl;
        j["precision"] = r.precision;
        j["recall"] = r.recall;
        j["f1"] = r.f1;
        j["sparsity"] = r.sparsity;
        out += j.dump() + "\n";
    }
    nlohmann::ordered_json s;
    s["experiment"] = experiment;
    s["final_f1"] = records.empty() ? 0.0 : records.back().f1;
    if (prune) {
        s["prune_threshold"] = prune->threshold;
        s["prune_sparsity"] = prune->sparsity;
        s["feature_change"] = prune->feature_change;
    }
    s["diverged_at"] = diverged_at ? nlohmann::ordered_json(*diverged_at) : nlohmann::ordered_json(nullptr);
    out += s.dump() + "\n";
    return out;
}

std::vector<LabeledClip> evaluation_clips(const SynthSpec& synth, std::uint64_t seed, std::size_t count)
{
    Rng root(seed);
    std::vector<LabeledClip> clips;
    clips.reserve(count);
    for (std::size_t j = 0; j < count; ++j) {
        Rng r = root.stream(kEvalStreamBase + j);
        clips.push_back(synth_clip(synth, r));
    }
    return clips;
}

Evaluation evaluate(const Filterbank& fb, const BatchNormState& bn, const SalienceHead& head,
                    std::span<const LabeledClip> clips, double decision_threshold)
{
    Evaluation out;
    std::vector<Matrix> logits;
    std::vector<BoolMatrix> preds, truth;
    for (const auto& clip : clips) {
        ForwardResult fwd = frontend_forward(std::span<const RealSignal>(&clip.signal, 1), fb, bn, DropoutSettings{},
                                             Mode::eval);
        logits.push_back(head.forward(fwd.features[0].values));
        preds.push_back(threshold_logits(logits.back(), decision_threshold));
        truth.push_back(clip.labels);
    }
    out.loss = bce_loss(logits, truth).value;
    out.metrics = frame_metrics(preds, truth);
    return out;
}

TrainReport run_experiment(const TrainConfig& cfg)
{
    cfg.validate();
    Trainer t(cfg);
    const std::vector<LabeledClip> eval = evaluation_clips(cfg.synth, cfg.seed, cfg.eval_clips);

    {
        const auto first = t.training_batch(0);
        t.calibrate_batch_norm(signals_of(first));
    }

    TrainReport report;
    report.experiment = t.exp.id();
    report.records.push_back(t.record(0, eval));
    for (std::size_t s = 1; s <= cfg.steps; ++s) {
        const auto clips = t.training_batch(s - 1);
        const auto signals = signals_of(clips);
        const auto labels = labels_of(clips);
        try {
            t.step(s, signals, labels);
        } catch (const Error& e) {
            if (e.code() != Errc::divergence && e.code() != Errc::non_finite) {
                throw;
            }
            report.diverged_at = s;
            break;
        }
        if (s % cfg.eval_every == 0 || s == cfg.steps) {
            report.records.push_back(t.record(s, eval));
        }
    }

    report.bank = t.model.fb;
    report.bn = t.model.bn;
    report.dropout_state = t.model.var;
    report.head = t.model.head;
    if (t.model.var) {
        const PruneResult pr = prune(t.model.fb, *t.model.var, cfg.prune_threshold);
        double diff = 0.0, ref = 0.0;
        for (const auto& clip : eval) {
            const Matrix a = filterbank_magnitude(clip.signal, t.model.fb).values;
            const Matrix b = filterbank_magnitude(clip.signal, pr.bank).values;
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = a.flat()[i] - b.flat()[i];
                diff += d * d;
                ref += a.flat()[i] * a.flat()[i];
            }
        }
        report.prune = PruneSummary{cfg.prune_threshold, pr.sparsity, ref > 0.0 ? std::sqrt(diff / ref) : 0.0};
    }
    return report;
}

std::vector<double> fixed_batch_losses(const TrainConfig& cfg, std::size_t steps)
{
    cfg.validate();
    Trainer t(cfg);
    const auto clips = t.training_batch(0);
    const auto signals = signals_of(clips);
    const auto labels = labels_of(clips);
    t.calibrate_batch_norm(signals);
    auto deterministic = [&] {
        const DropoutSettings none = detail::dropout_settings(t.model, DropoutKind::none, 0.0, 0.0, 0);
        return detail::objective(t.model, signals, labels, none, Mode::train, false).bce + t.kl_value();
    };
    std::vector<double> losses;
    losses.push_back(deterministic());
    for (std::size_t s = 1; s <= steps; ++s) {
        t.step(s, signals, labels);
        losses.push_back(deterministic());
    }
    return losses;
}

} // namespace afb
