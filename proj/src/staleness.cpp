#include "evoflux/staleness.hpp"

#include <sstream>

#include "evoflux/errors.hpp"

namespace evoflux {

std::string to_string(PolicyVariant v) {
  switch (v) {
    case PolicyVariant::full: return "full";
    case PolicyVariant::guarded: return "guarded";
    case PolicyVariant::reflective: return "reflective";
  }
  return "full";
}

PolicyVariant policy_variant_from_string(const std::string& s) {
  if (s == "full") return PolicyVariant::full;
  if (s == "guarded") return PolicyVariant::guarded;
  if (s == "reflective") return PolicyVariant::reflective;
  throw ConfigError("invalid policy '" + s + "' (expected full | guarded | reflective)");
}

std::string to_string(GateOutcome o) {
  switch (o) {
    case GateOutcome::proceed: return "continue";
    case GateOutcome::discard: return "discard";
    case GateOutcome::patched: return "patched";
  }
  return "continue";
}

ReflectorRegistry::ReflectorRegistry() { add(std::make_shared<MockReflector>()); }

void ReflectorRegistry::add(std::shared_ptr<Reflector> reflector) {
  const std::string id = reflector->id();
  reflectors_[id] = std::move(reflector);
}

std::shared_ptr<Reflector> ReflectorRegistry::find(const std::string& id) const {
  auto it = reflectors_.find(id);
  return it == reflectors_.end() ? nullptr : it->second;
}

void StalenessPolicy::validate(const ReflectorRegistry& registry) const {
  if (variant == PolicyVariant::reflective && !registry.find(reflector_id)) {
    throw ConfigError("reflective policy needs a registered reflector, '" + reflector_id + "' is unknown");
  }
}

namespace {

/// Latest value of every field changed by a confirmed-state update.
std::map<std::string, int> confirmed_changes(std::span<const PoolUpdate> updates) {
  std::map<std::string, int> latest;
  for (const auto& u : updates) {
    if (u.op != UpdateOp::insert_confirmed && u.op != UpdateOp::confirm) continue;
    for (const auto& [field, value] : u.diff) latest[field] = value;
  }
  return latest;
}

}  // namespace

ReflectVerdict mock_reflector(const Payload& payload, std::span<const PoolUpdate> updates) {
  const EditSet* edits = payload_edits(payload);
  if (!edits) throw FormatError("mock reflector needs a structured edit payload");
  const auto touched = confirmed_changes(updates);
  ReflectVerdict v;
  for (const auto& [field, value] : *edits) {
    // untouched -> orthogonal; same value -> subsumed; other value -> conflicting
    if (!touched.count(field)) v.edits.emplace(field, value);
  }
  v.keep = !v.edits.empty();
  return v;
}

ReflectVerdict MockReflector::reflect(const Payload& payload, std::span<const PoolUpdate> updates,
                                      const BackendResponse* /*response*/) const {
  return mock_reflector(payload, updates);
}

std::optional<BackendRequest> LlmReflector::request(const Payload& payload,
                                                    std::span<const PoolUpdate> updates) const {
  const EditSet* edits = payload_edits(payload);
  if (!edits) throw FormatError("llm reflector needs a structured edit payload");
  std::ostringstream os;
  os << "A proposed artifact edit was produced against an older version of the artifact pool.\n"
     << "Proposed edits:\n";
  for (const auto& [field, value] : *edits) os << "  " << field << '=' << value << '\n';
  os << "Pool updates since then:\n";
  for (const auto& u : updates) os << "  v" << u.version << ": " << u.summary << '\n';
  os << "For each edit decide whether it is orthogonal, already subsumed, or conflicting.\n"
     << "Reply with one line: either `KEEP field=value,...` listing only orthogonal edits, or `DROP`.\n";
  BackendRequest req;
  req.prompt = os.str();
  req.prompt_tokens = static_cast<int>(req.prompt.size() / 4);
  req.max_output_tokens = max_output_tokens_;
  return req;
}

ReflectVerdict LlmReflector::reflect(const Payload& payload, std::span<const PoolUpdate> /*updates*/,
                                     const BackendResponse* response) const {
  const EditSet* edits = payload_edits(payload);
  if (!edits) throw FormatError("llm reflector needs a structured edit payload");
  if (!response) throw ReflectorError("llm reflector called without a backend response");
  std::istringstream in(response->text);
  std::string line;
  while (std::getline(in, line)) {
    const auto start = line.find_first_not_of(" \t`");
    if (start == std::string::npos) continue;
    line = line.substr(start);
    if (line.rfind("DROP", 0) == 0) return {};
    if (line.rfind("KEEP", 0) != 0) continue;
    ReflectVerdict v;
    std::istringstream items(line.substr(4));
    std::string item;
    while (std::getline(items, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t`");
        const auto e = s.find_last_not_of(" \t`\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      const std::string field = trim(item.substr(0, eq));
      auto it = edits->find(field);
      // only edits that were actually proposed can survive
      if (it != edits->end() && trim(item.substr(eq + 1)) == std::to_string(it->second)) {
        v.edits.emplace(field, it->second);
      }
    }
    v.keep = !v.edits.empty();
    return v;
  }
  return {};
}

std::int64_t version_gap(const QueueItem& item, PoolVersion pool_version) {
  if (item.force_stale) return kForceStaleGap;
  if (item.origin_version > pool_version) {
    throw InvariantViolation("item " + std::to_string(item.item_id) + " origin version " +
                             std::to_string(item.origin_version) + " is ahead of pool version " +
                             std::to_string(pool_version));
  }
  return static_cast<std::int64_t>(pool_version - item.origin_version);
}

std::int64_t version_gap(const QueueItem& item, const ArtifactPool& pool) {
  return version_gap(item, pool.version());
}

GateDecision gate(const QueueItem& item, const ArtifactPool& pool, const StalenessPolicy& policy,
                  const Reflector* reflector, const BackendResponse* response) {
  const PoolVersion v = pool.version();
  GateDecision d;
  d.delta = version_gap(item, v);
  switch (policy.variant) {
    case PolicyVariant::full:
      // rolled-back lineages never reach the pool
      d.outcome = item.force_stale ? GateOutcome::discard : GateOutcome::proceed;
      return d;
    case PolicyVariant::guarded:
      d.outcome = d.delta <= static_cast<std::int64_t>(policy.delta_max) ? GateOutcome::proceed
                                                                          : GateOutcome::discard;
      return d;
    case PolicyVariant::reflective:
      break;
  }
  if (d.delta == 0) {
    d.outcome = GateOutcome::proceed;
    return d;
  }
  if (!reflector) throw ConfigError("reflective gate invoked without a reflector");
  try {
    const PoolVersion from = item.force_stale ? std::min(item.origin_version, v) : item.origin_version;
    const auto updates = pool.updates_between(from, v);
    const ReflectVerdict verdict = reflector->reflect(item.payload, updates, response);
    if (!verdict.keep) {
      d.outcome = GateOutcome::discard;
      return d;
    }
    const auto base = pool.best_confirmed();
    if (!base) throw ReflectorError("no confirmed artifact to rebase onto");
    d.patched_payload = rebase_payload(item.payload, base->artifact.id,
                                       decode_genome(base->artifact.payload), verdict.edits, v);
    d.outcome = GateOutcome::patched;
  } catch (const Error& e) {
    d.outcome = GateOutcome::discard;
    d.patched_payload.reset();
    d.reflector_error = true;
    d.error = e.what();
  }
  return d;
}

}  // namespace evoflux
