#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evoflux/edits.hpp"

namespace evoflux {

using PoolVersion = std::uint64_t;

enum class ArtifactKind { prompt, context, harness, program, synthetic };

std::string to_string(ArtifactKind kind);
ArtifactKind artifact_kind_from_string(const std::string& s);

struct Artifact {
  std::string id;
  std::string payload;
  ArtifactKind kind = ArtifactKind::synthetic;
  std::optional<std::string> parent_id;
  PoolVersion created_at_version = 0;
};

enum class EntryStatus { confirmed, speculative };

struct PoolEntry {
  Artifact artifact;
  double score = 0.0;
  EntryStatus status = EntryStatus::confirmed;
  PoolVersion inserted_at_version = 0;
};

enum class UpdateOp { insert_confirmed, insert_speculative, confirm, rollback };

std::string to_string(UpdateOp op);
UpdateOp update_op_from_string(const std::string& s);

/// One committed pool change. `diff` is the structured field-level change for
/// synthetic artifacts (relative to the parent); empty for other kinds and
/// for rollbacks.
struct PoolUpdate {
  PoolVersion version = 0;
  UpdateOp op = UpdateOp::insert_confirmed;
  std::string artifact_id;
  std::string summary;
  EditSet diff;
  double score = 0.0;
};

enum class ConfirmOutcome { confirmed, rolled_back };

struct ConfirmResult {
  ConfirmOutcome outcome;
  PoolVersion version;
};

struct PoolSnapshot {
  PoolVersion version = 0;
  double best_score = 0.0;
};

/// Picks one artifact among the eligible pool entries. Entries arrive ordered
/// by insertion version.
class Selector {
 public:
  virtual ~Selector() = default;
  virtual const PoolEntry& choose(std::span<const PoolEntry* const> eligible,
                                  std::mt19937_64& rng) const = 0;
};

/// Highest score wins; ties go to the earliest inserted entry.
class BestScoreSelector final : public Selector {
 public:
  const PoolEntry& choose(std::span<const PoolEntry* const> eligible,
                          std::mt19937_64& rng) const override;
};

/// Versioned store of confirmed and speculative artifacts.
///
/// Every mutating call is serialized under one mutex and bumps the version by
/// exactly one, appending the matching PoolUpdate to the log. Read accessors
/// return copies taken under the same mutex.
class ArtifactPool {
 public:
  explicit ArtifactPool(bool speculative_selectable = false);

  ArtifactPool(const ArtifactPool&) = delete;
  ArtifactPool& operator=(const ArtifactPool&) = delete;

  PoolVersion insert_confirmed(Artifact artifact, double score);

  /// Rejects with GateFailed unless partial_score > best_score.
  PoolVersion insert_speculative(Artifact artifact, double partial_score);

  /// Promotes a speculative entry when full_score beats the best confirmed
  /// score at this instant, otherwise removes it.
  ConfirmResult confirm_speculative(const std::string& artifact_id, double full_score);

  /// Log entries with version in (v_from, v_to].
  std::vector<PoolUpdate> updates_between(PoolVersion v_from, PoolVersion v_to) const;

  Artifact select_candidate(const Selector& selector, std::mt19937_64& rng) const;

  PoolSnapshot snapshot() const;
  PoolVersion version() const;
  double best_score() const;
  bool speculative_selectable() const { return speculative_selectable_; }

  std::optional<PoolEntry> find(const std::string& artifact_id) const;
  /// Highest-scoring confirmed entry (earliest on ties).
  std::optional<PoolEntry> best_confirmed() const;
  /// All live entries ordered by insertion version.
  std::vector<PoolEntry> entries() const;
  std::vector<PoolUpdate> log() const;

  nlohmann::json to_checkpoint() const;
  void write_checkpoint(const std::filesystem::path& path) const;

 private:
  PoolVersion append_locked(UpdateOp op, const std::string& id, std::string summary,
                            EditSet diff, double score);
  EditSet diff_for_locked(const Artifact& artifact) const;
  std::vector<const PoolEntry*> ordered_locked() const;

  mutable std::mutex mu_;
  std::map<std::string, PoolEntry> entries_;
  // Synthetic genomes of every artifact ever inserted, so a rolled-back parent
  // still yields a diff for its children.
  std::map<std::string, Genome> genomes_;
  std::set<std::string> seen_ids_;
  std::vector<PoolUpdate> log_;
  double best_score_ = 0.0;
  bool speculative_selectable_;
};

nlohmann::json to_json(const PoolUpdate& u);
PoolUpdate pool_update_from_json(const nlohmann::json& j);

}  // namespace evoflux
