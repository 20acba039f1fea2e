#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "evoflux/artifact_pool.hpp"
#include "evoflux/edits.hpp"

namespace evoflux {

/// Outcome of running an artifact on one task sample, feature by feature.
struct FeatureCheck {
  std::string feature;
  int value = 0;
  int target = 0;
  bool match = false;

  bool operator==(const FeatureCheck&) const = default;
};

struct Trajectory {
  std::string sample_id;
  std::vector<FeatureCheck> checks;

  bool failed() const;
  bool operator==(const Trajectory&) const = default;
};

/// Generate-stage input: the artifact chosen from the pool.
struct SelectPayload {
  std::string artifact_id;
  Genome genome;

  bool operator==(const SelectPayload&) const = default;
};

/// Generate -> propose: execution feedback plus the corrections it implies.
struct FeedbackPayload {
  std::string parent_id;
  Genome parent;
  std::vector<Trajectory> trajectories;
  EditSet corrections;

  bool operator==(const FeedbackPayload&) const = default;
};

/// Propose -> evaluate: a candidate artifact and its edits against the parent.
struct CandidatePayload {
  std::string artifact_id;
  std::string parent_id;
  Genome genome;
  EditSet edits;
  PoolVersion created_at_version = 0;

  bool operator==(const CandidatePayload&) const = default;
};

/// Payload without field structure (real prompts, code). Reflectors that
/// need structure reject it.
struct OpaquePayload {
  std::string text;

  bool operator==(const OpaquePayload&) const = default;
};

using Payload = std::variant<SelectPayload, FeedbackPayload, CandidatePayload, OpaquePayload>;

nlohmann::json payload_to_json(const Payload& p);
Payload payload_from_json(const nlohmann::json& j);

/// Structured edits carried by the payload, or nullptr when it has none.
const EditSet* payload_edits(const Payload& p);

/// Re-expresses `p` on top of `base` keeping only `surviving` edits.
/// Throws FormatError for payloads without edits.
Payload rebase_payload(const Payload& p, const std::string& base_id, const Genome& base,
                       const EditSet& surviving, PoolVersion at_version);

struct QueueItem {
  std::uint64_t item_id = 0;
  std::string stage;
  /// Evolution-step index the item descends from; keys request ids and RNG.
  std::uint64_t step = 0;
  Payload payload;
  PoolVersion origin_version = 0;
  std::set<std::string> spec_lineage;
  bool tentative = false;
  bool supplementary = false;
  bool force_stale = false;
  double created_at = 0.0;
  /// Output tokens already spent producing this item (charged as waste on discard).
  std::uint64_t spent_tokens = 0;
  /// Stage a reflected item returns to.
  std::string return_stage;
  int reflections = 0;
};

}  // namespace evoflux
