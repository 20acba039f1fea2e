#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "evoflux/artifact_pool.hpp"

namespace evoflux {

/// Completed sub-requests needed before a tentative release:
/// ceil(alpha * fan_out), never below 1 nor above fan_out.
std::size_t release_threshold(double alpha_spec, std::size_t fan_out);

struct PartialScore {
  std::size_t passed = 0;
  std::size_t evaluated = 0;

  double score() const { return evaluated == 0 ? 0.0 : static_cast<double>(passed) / evaluated; }
};

enum class SpecGate { insert, hold };

/// Insert iff the partial score strictly beats the best confirmed score.
SpecGate speculative_eval_gate(const PartialScore& partial, double best_score);
SpecGate speculative_eval_gate(const PartialScore& partial, const ArtifactPool& pool);

/// Progress of one fan-out handler with speculative release. The tracker only
/// counts; what gets released is the caller's business.
class ReleaseTracker {
 public:
  ReleaseTracker(double alpha_spec, std::size_t fan_out);

  /// Records one finished sub-request. Returns true exactly once: at the
  /// completion that first reaches the threshold (never when alpha = 1).
  bool on_complete();

  bool released() const { return released_; }
  bool all_done() const { return completed_ == fan_out_; }
  std::size_t completed() const { return completed_; }
  std::size_t threshold() const { return threshold_; }
  std::size_t fan_out() const { return fan_out_; }
  /// Fraction completed at the moment of release.
  double released_fraction() const { return released_fraction_; }
  bool speculative() const { return threshold_ < fan_out_; }

 private:
  std::size_t fan_out_;
  std::size_t threshold_;
  std::size_t completed_ = 0;
  bool released_ = false;
  double released_fraction_ = 0.0;
};

enum class ReconcileOutcome { confirmed, rolled_back, finalized };

std::string to_string(ReconcileOutcome o);

/// Settles a speculative pool insert once full evaluation is in. On rollback
/// `mark_stale` is called with the removed artifact id.
ReconcileOutcome reconcile(ArtifactPool& pool, const std::string& artifact_id, double full_score,
                           const std::function<std::size_t(const std::string&)>& mark_stale);

}  // namespace evoflux
