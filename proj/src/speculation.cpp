#include "evoflux/speculation.hpp"

#include <algorithm>
#include <cmath>

#include "evoflux/errors.hpp"

namespace evoflux {

std::size_t release_threshold(double alpha_spec, std::size_t fan_out) {
  if (!(alpha_spec > 0.0 && alpha_spec <= 1.0)) {
    throw ConfigError("alpha_spec must lie in (0, 1]");
  }
  if (fan_out == 0) return 0;
  // tolerance absorbs products such as 0.1 * 30 = 3.0000000000000004
  const double raw = std::ceil(alpha_spec * static_cast<double>(fan_out) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, fan_out);
}

SpecGate speculative_eval_gate(const PartialScore& partial, double best_score) {
  return partial.score() > best_score ? SpecGate::insert : SpecGate::hold;
}

SpecGate speculative_eval_gate(const PartialScore& partial, const ArtifactPool& pool) {
  return speculative_eval_gate(partial, pool.best_score());
}

ReleaseTracker::ReleaseTracker(double alpha_spec, std::size_t fan_out)
    : fan_out_(fan_out), threshold_(release_threshold(alpha_spec, fan_out)) {}

bool ReleaseTracker::on_complete() {
  if (completed_ == fan_out_) throw InvariantViolation("more completions than sub-requests");
  ++completed_;
  if (released_ || !speculative() || completed_ < threshold_) return false;
  released_ = true;
  released_fraction_ = static_cast<double>(completed_) / static_cast<double>(fan_out_);
  return true;
}

std::string to_string(ReconcileOutcome o) {
  switch (o) {
    case ReconcileOutcome::confirmed: return "confirmed";
    case ReconcileOutcome::rolled_back: return "rolled_back";
    case ReconcileOutcome::finalized: return "finalized";
  }
  return "finalized";
}

ReconcileOutcome reconcile(ArtifactPool& pool, const std::string& artifact_id, double full_score,
                           const std::function<std::size_t(const std::string&)>& mark_stale) {
  const auto result = pool.confirm_speculative(artifact_id, full_score);
  if (result.outcome == ConfirmOutcome::confirmed) return ReconcileOutcome::confirmed;
  if (mark_stale) mark_stale(artifact_id);
  return ReconcileOutcome::rolled_back;
}

}  // namespace evoflux
