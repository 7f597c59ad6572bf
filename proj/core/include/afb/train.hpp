#pragma once

#include "afb/design.hpp"
#include "afb/dropout.hpp"
#include "afb/frontend.hpp"
#include "afb/matrix.hpp"
#include "afb/rng.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace afb {

/// Dense boolean matrix, [rows x cols], row-major.
struct BoolMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> data;

    BoolMatrix() = default;
    BoolMatrix(std::size_t r, std::size_t c, bool fill = false) : rows(r), cols(c), data(r * c, fill ? 1 : 0) {}

    bool operator()(std::size_t r, std::size_t c) const { return data[r * cols + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { data[r * cols + c] = v ? 1 : 0; }
    std::size_t count() const;

    friend bool operator==(const BoolMatrix&, const BoolMatrix&) = default;
};

// ---------------------------------------------------------------------------
// Synthetic piano-like data

struct SynthSpec {
    std::size_t n_pitches = 12;
    int lowest_midi = 48;
    std::size_t max_polyphony = 4;
    double note_rate = 4.0;            // onsets per second
    double min_note = 0.25, max_note = 1.0;   // note length, seconds
    double min_decay = 0.4, max_decay = 1.2;  // envelope time constant, seconds
    double min_inharmonicity = 0.0, max_inharmonicity = 4e-4;
    std::size_t n_harmonics = 8;
    double rolloff_db = 6.0;           // per harmonic
    double noise_floor_db = -std::numeric_limits<double>::infinity();
    double min_amplitude = 0.3, max_amplitude = 1.0;
    double duration = 2.0;
    int rate = 16000;
    std::size_t hop = 512;

    double fundamental(std::size_t pitch) const;
    /// Throws std::invalid_argument if any modeled partial reaches Nyquist.
    void validate() const;
};

struct NoteEvent {
    std::size_t pitch = 0;
    double onset = 0.0;
    double offset = 0.0;
    double decay = 0.5;
    double inharmonicity = 0.0;
    double amplitude = 1.0;
};

struct LabeledClip {
    RealSignal signal;
    BoolMatrix labels;  // [n_pitches x n_frames]
    std::vector<NoteEvent> notes;
};

/// Envelopes decaying below this fraction of their peak stop counting as active (-40 dB).
inline constexpr double kLabelFloor = 0.01;

LabeledClip synth_clip(const SynthSpec& spec, Rng& rng);

/// Renders explicit note events; labels follow the same -40 dB rule.
LabeledClip render_notes(const SynthSpec& spec, std::span<const NoteEvent> notes, Rng& rng);

// ---------------------------------------------------------------------------
// Salience head, loss, optimizer, metrics

/// Per-frame linear map from normalized features to pitch logits.
struct SalienceHead {
    Matrix weight;              // [n_pitches x n_bins]
    std::vector<double> bias;   // [n_pitches]

    static SalienceHead init(std::size_t n_pitches, std::size_t n_bins, Rng& rng, double scale = 0.01);
    Matrix forward(const Matrix& features) const;

    struct Grad {
        Matrix d_weight;
        std::vector<double> d_bias;
    };
    /// Accumulates parameter gradients into `grad` and returns d features.
    Matrix backward(const Matrix& features, const Matrix& d_logits, Grad& grad) const;
};

struct LossResult {
    double value = 0.0;
    std::vector<Matrix> d_logits;
};

/// Mean binary cross-entropy with logits over every cell of every item.
LossResult bce_loss(std::span<const Matrix> logits, std::span<const BoolMatrix> labels);
LossResult bce_loss(const Matrix& logits, const BoolMatrix& labels);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// One bias-corrected Adam update. Throws Error(Errc::non_finite) and leaves
/// everything untouched when a gradient is NaN or infinite.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr);

struct FrameMetrics {
    double precision = 1.0;
    double recall = 1.0;
    double f1 = 0.0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
};

FrameMetrics frame_metrics(const BoolMatrix& pred, const BoolMatrix& truth);
FrameMetrics frame_metrics(std::span<const BoolMatrix> pred, std::span<const BoolMatrix> truth);

/// logits > logit(threshold)
BoolMatrix threshold_logits(const Matrix& logits, double probability_threshold = 0.5);

// ---------------------------------------------------------------------------
// Experiments

/// One cell of the experiment grid: variant + initialization + dropout.
struct Experiment {
    Variant variant = Variant::hilbert;
    InitKind init = InitKind::vqt;
    DropoutKind dropout = DropoutKind::none;

    /// Accepts "hb+vqt", "cl+rnd+var", "fixed+comb", or a bare "vqt"/"comb"/"rnd" (fixed bank).
    static Experiment parse(const std::string& id);
    std::string id() const;
    bool trains_filters() const { return variant != Variant::fixed; }
};

struct TrainConfig {
    std::string experiment = "hb+vqt";
    FilterbankSpec bank = desk_bank();
    SynthSpec synth{};
    std::size_t batch_size = 4;
    std::size_t steps = 2000;
    double lr = 1e-3;
    std::optional<double> filter_lr;  // filter weights and log-variances; defaults to lr
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    /// Defaults to 0.01 for variational runs; must be 0 otherwise.
    std::optional<double> kl_scale;
    double log_var_init = -10.0;
    double bernoulli_rate = 0.1;
    double gaussian_log_var = -10.0;
    std::uint64_t seed = 1;
    std::uint64_t init_seed = 7;
    std::size_t eval_every = 100;
    std::size_t eval_clips = 16;
    double prune_threshold = 3.0;
    double decision_threshold = 0.5;

    /// 48 semitone-spaced bins from C2 with ERB-derived gamma, hop 512 at 16 kHz.
    static FilterbankSpec desk_bank();

    void validate() const;
    double resolved_kl_scale() const;
};

struct ReportRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double kl = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double sparsity = 0.0;
};

struct PruneSummary {
    double threshold = 3.0;
    double sparsity = 0.0;
    double feature_change = 0.0;  // relative Frobenius change of held-out magnitude maps
};

struct TrainReport {
    std::string experiment;
    std::vector<ReportRecord> records;
    Filterbank bank;
    BatchNormState bn;
    std::optional<VarDropoutState> dropout_state;
    SalienceHead head;
    std::optional<PruneSummary> prune;
    std::optional<std::size_t> diverged_at;

    const ReportRecord& final_record() const { return records.back(); }
    /// One JSON object per line: the records, then a summary line.
    std::string to_jsonl() const;
};

/// Held-out evaluation set, deterministic in (synth spec, seed).
std::vector<LabeledClip> evaluation_clips(const SynthSpec& synth, std::uint64_t seed, std::size_t count);

struct Evaluation {
    double loss = 0.0;
    FrameMetrics metrics;
};

Evaluation evaluate(const Filterbank& fb, const BatchNormState& bn, const SalienceHead& head,
                    std::span<const LabeledClip> clips, double decision_threshold = 0.5);

TrainReport run_experiment(const TrainConfig& cfg);

/// Trains on one fixed batch for `steps` steps and returns the deterministic
/// (noise-free, train-mode normalization) objective before each step and after the last.
std::vector<double> fixed_batch_losses(const TrainConfig& cfg, std::size_t steps);

// ---------------------------------------------------------------------------
// Finite-difference gradient suite

struct GradCheckConfig {
    std::uint64_t seed = 7;
    std::size_t n_filters = 4;
    double duration = 1.0;
    std::size_t batch_size = 2;
    std::size_t samples_per_case = 48;
    double step = 0.02; // starting step relative to |parameter|
    double absolute_floor = 1e-7;
};

struct GradCheckEntry {
    std::string case_id;
    std::string group;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    std::vector<std::string> groups_covered() const;
};

/// Central differences of the full objective (frontend, head, BCE and KL)
/// against the reverse pass, for every variant and dropout mode with the
/// noise draw held fixed.
GradCheckReport gradient_check(const GradCheckConfig& cfg);

} // namespace afb
