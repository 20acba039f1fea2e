#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "evoflux/artifact_pool.hpp"
#include "evoflux/backend.hpp"
#include "evoflux/queue_item.hpp"

namespace evoflux {

enum class PolicyVariant { full, guarded, reflective };

std::string to_string(PolicyVariant v);
/// Throws ConfigError for anything but "full" | "guarded" | "reflective".
PolicyVariant policy_variant_from_string(const std::string& s);

/// Gap reported for items whose speculative ancestor was rolled back.
inline constexpr std::int64_t kForceStaleGap = std::numeric_limits<std::int64_t>::max();

class Reflector;

/// Registered reflectors by id ("mock", "llm", ...).
class ReflectorRegistry {
 public:
  ReflectorRegistry();  // registers "mock"
  void add(std::shared_ptr<Reflector> reflector);
  std::shared_ptr<Reflector> find(const std::string& id) const;

 private:
  std::map<std::string, std::shared_ptr<Reflector>> reflectors_;
};

struct StalenessPolicy {
  PolicyVariant variant = PolicyVariant::full;
  std::uint64_t delta_max = 0;
  std::string reflector_id = "mock";

  void validate(const ReflectorRegistry& registry) const;
};

enum class GateOutcome { proceed, discard, patched };

std::string to_string(GateOutcome o);

struct GateDecision {
  GateOutcome outcome = GateOutcome::proceed;
  std::optional<Payload> patched_payload;
  std::int64_t delta = 0;
  /// Set when the discard came from a reflector failure.
  bool reflector_error = false;
  std::string error;
};

struct ReflectVerdict {
  bool keep = false;
  EditSet edits;  // surviving edits when keep
};

/// Decides whether a stale structured item still carries a useful change.
class Reflector {
 public:
  virtual ~Reflector() = default;
  virtual std::string id() const = 0;

  /// Backend call the reflect stage issues for this item, if any.
  virtual std::optional<BackendRequest> request(const Payload& /*payload*/,
                                                std::span<const PoolUpdate> /*updates*/) const {
    return std::nullopt;
  }

  /// `response` is the completed backend call from request(), when one was made.
  virtual ReflectVerdict reflect(const Payload& payload, std::span<const PoolUpdate> updates,
                                 const BackendResponse* response) const = 0;
};

/// Deterministic classifier: an edit survives only when no confirmed-state
/// update in the window touched its field.
ReflectVerdict mock_reflector(const Payload& payload, std::span<const PoolUpdate> updates);

class MockReflector final : public Reflector {
 public:
  std::string id() const override { return "mock"; }
  ReflectVerdict reflect(const Payload& payload, std::span<const PoolUpdate> updates,
                         const BackendResponse* response) const override;
};

/// Prompts a chat backend with the stale edits and the update summaries and
/// parses a `KEEP f=v,...` / `DROP` reply. Falls back to DROP on anything else.
class LlmReflector final : public Reflector {
 public:
  explicit LlmReflector(int max_output_tokens = 512) : max_output_tokens_(max_output_tokens) {}
  std::string id() const override { return "llm"; }
  std::optional<BackendRequest> request(const Payload& payload,
                                        std::span<const PoolUpdate> updates) const override;
  ReflectVerdict reflect(const Payload& payload, std::span<const PoolUpdate> updates,
                         const BackendResponse* response) const override;

 private:
  int max_output_tokens_;
};

std::int64_t version_gap(const QueueItem& item, PoolVersion pool_version);
std::int64_t version_gap(const QueueItem& item, const ArtifactPool& pool);

/// Pure gate over (item, pool snapshot, policy); reflective gates call the
/// reflector with updates_between(origin_version, version) and rebase kept
/// edits onto the best confirmed artifact.
GateDecision gate(const QueueItem& item, const ArtifactPool& pool, const StalenessPolicy& policy,
                  const Reflector* reflector = nullptr, const BackendResponse* response = nullptr);

}  // namespace evoflux
