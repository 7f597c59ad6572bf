#pragma once

// Internal: the scalar training objective shared by the trainer and the
// finite-difference suite.

#include "afb/train.hpp"

#include <optional>
#include <span>

namespace afb::detail {

struct Model {
    Filterbank fb;
    BatchNormState bn;
    std::optional<VarDropoutState> var;
    SalienceHead head;
};

struct ObjectiveResult {
    double bce = 0.0;
    double kl = 0.0;
    double total() const { return bce + kl; }
    FrontendGradients frontend;
    SalienceHead::Grad head;
    std::optional<KlResult> kl_real, kl_imag;
    BatchStats stats;
};

DropoutSettings dropout_settings(const Model& model, DropoutKind kind, double bernoulli_rate,
                                 double gaussian_log_var, std::uint64_t seed);

/// Forward (and, when `with_gradients`, backward) of BCE + KL on one batch.
ObjectiveResult objective(const Model& model, std::span<const RealSignal> signals, std::span<const BoolMatrix> labels,
                          const DropoutSettings& dropout, Mode mode, bool with_gradients);

} // namespace afb::detail
