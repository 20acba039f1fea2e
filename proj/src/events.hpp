#pragma once

// Trace-line builders shared by the pipeline engine and the serial reference
// loop so both describe the same transition with the same fields.

#include <cstdint>
#include <optional>
#include <string>

#include "evoflux/artifact_pool.hpp"
#include "evoflux/executor.hpp"
#include "evoflux/queue_item.hpp"
#include "evoflux/trace.hpp"

namespace evoflux::events {

struct Emitter {
  Trace& trace;
  const Executor& clock;
  const ArtifactPool& pool;

  void emit(EventKind kind, std::string stage, std::optional<std::uint64_t> item,
            nlohmann::json detail) const {
    TraceEvent e;
    e.t = clock.now();
    e.kind = kind;
    e.stage = std::move(stage);
    e.item_id = item;
    e.version = pool.version();
    e.detail = std::move(detail);
    trace.emit(std::move(e));
  }

  void snapshot() const {
    const auto best = pool.best_confirmed();
    emit(EventKind::pool_update, "pool", std::nullopt,
         {{"op", "snapshot"},
          {"artifact_id", best ? best->artifact.id : std::string()},
          {"best_score", pool.best_score()}});
  }

  void pop(const QueueItem& item, std::int64_t delta) const {
    emit(EventKind::pop, item.stage, item.item_id,
         {{"delta", delta}, {"origin_version", item.origin_version}, {"force_stale", item.force_stale}});
  }

  void push(const std::string& from, const QueueItem& item, bool final, std::uint64_t source_item) const {
    emit(EventKind::push, from, item.item_id,
         {{"from", from},
          {"to", item.stage},
          {"final", final},
          {"tentative", item.tentative},
          {"supplementary", item.supplementary},
          {"source_item", source_item},
          {"payload", payload_to_json(item.payload)}});
  }

  /// Evaluate's terminal push into the pool.
  void commit(std::uint64_t item_id, const std::string& artifact_id, const std::string& decision,
              double score, std::uint64_t wasted_tokens) const {
    nlohmann::json d = {{"from", "evaluate"}, {"to", "pool"},           {"final", true},
                        {"tentative", false},  {"supplementary", false}, {"decision", decision},
                        {"artifact_id", artifact_id}, {"score", score}};
    if (wasted_tokens > 0) d["wasted_tokens"] = wasted_tokens;
    emit(EventKind::push, "evaluate", item_id, std::move(d));
  }

  /// The pool change made last, attributed to `item_id`.
  void pool_update(std::optional<std::uint64_t> item_id) const {
    const auto log = pool.log();
    nlohmann::json d = to_json(log.back());
    d["best_score"] = pool.best_score();
    emit(EventKind::pool_update, "pool", item_id, std::move(d));
  }

  void discard(const QueueItem& item, const std::string& reason, std::uint64_t wasted_tokens,
               const std::string& message = {}) const {
    nlohmann::json d = {{"reason", reason}, {"wasted_tokens", wasted_tokens}};
    if (!message.empty()) d["error"] = message;
    emit(EventKind::discard, item.stage, item.item_id, std::move(d));
  }
};

}  // namespace evoflux::events
