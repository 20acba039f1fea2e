#include "evoflux/artifact_pool.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "evoflux/errors.hpp"

namespace evoflux {

namespace {

void check_score(double score) {
  if (!(score >= 0.0 && score <= 1.0)) {
    throw RangeError("score must lie in [0,1], got " + std::to_string(score));
  }
}

std::string render_summary(UpdateOp op, const std::string& id, double score,
                           const EditSet& diff) {
  std::ostringstream os;
  os << to_string(op) << ' ' << id << " score=" << score;
  if (!diff.empty()) {
    os << " diff={";
    bool first = true;
    for (const auto& [field, value] : diff) {
      os << (first ? "" : ",") << field << ':' << value;
      first = false;
    }
    os << '}';
  }
  return os.str();
}

}  // namespace

std::string to_string(ArtifactKind kind) {
  switch (kind) {
    case ArtifactKind::prompt: return "prompt";
    case ArtifactKind::context: return "context";
    case ArtifactKind::harness: return "harness";
    case ArtifactKind::program: return "program";
    case ArtifactKind::synthetic: return "synthetic";
  }
  return "synthetic";
}

ArtifactKind artifact_kind_from_string(const std::string& s) {
  if (s == "prompt") return ArtifactKind::prompt;
  if (s == "context") return ArtifactKind::context;
  if (s == "harness") return ArtifactKind::harness;
  if (s == "program") return ArtifactKind::program;
  if (s == "synthetic") return ArtifactKind::synthetic;
  throw FormatError("unknown artifact kind '" + s + "'");
}

std::string to_string(UpdateOp op) {
  switch (op) {
    case UpdateOp::insert_confirmed: return "insert_confirmed";
    case UpdateOp::insert_speculative: return "insert_speculative";
    case UpdateOp::confirm: return "confirm";
    case UpdateOp::rollback: return "rollback";
  }
  return "insert_confirmed";
}

UpdateOp update_op_from_string(const std::string& s) {
  if (s == "insert_confirmed") return UpdateOp::insert_confirmed;
  if (s == "insert_speculative") return UpdateOp::insert_speculative;
  if (s == "confirm") return UpdateOp::confirm;
  if (s == "rollback") return UpdateOp::rollback;
  throw FormatError("unknown pool update op '" + s + "'");
}

const PoolEntry& BestScoreSelector::choose(std::span<const PoolEntry* const> eligible,
                                           std::mt19937_64& /*rng*/) const {
  const PoolEntry* best = eligible.front();
  for (const PoolEntry* e : eligible.subspan(1)) {
    if (e->score > best->score) best = e;
  }
  return *best;
}

ArtifactPool::ArtifactPool(bool speculative_selectable)
    : speculative_selectable_(speculative_selectable) {}

PoolVersion ArtifactPool::append_locked(UpdateOp op, const std::string& id, std::string summary,
                                        EditSet diff, double score) {
  PoolUpdate u;
  u.version = log_.size() + 1;
  u.op = op;
  u.artifact_id = id;
  u.summary = std::move(summary);
  u.diff = std::move(diff);
  u.score = score;
  log_.push_back(std::move(u));
  return log_.back().version;
}

EditSet ArtifactPool::diff_for_locked(const Artifact& artifact) const {
  if (artifact.kind != ArtifactKind::synthetic) return {};
  auto it = genomes_.find(artifact.id);
  if (it == genomes_.end()) return {};
  if (!artifact.parent_id) return it->second;
  auto parent = genomes_.find(*artifact.parent_id);
  if (parent == genomes_.end()) return it->second;
  return diff_genomes(parent->second, it->second);
}

PoolVersion ArtifactPool::insert_confirmed(Artifact artifact, double score) {
  check_score(score);
  std::lock_guard lock(mu_);
  if (seen_ids_.count(artifact.id)) throw DuplicateArtifact("artifact '" + artifact.id + "' already present");
  if (artifact.parent_id && !seen_ids_.count(*artifact.parent_id)) {
    throw InvariantViolation("parent '" + *artifact.parent_id + "' was never in the pool");
  }
  if (artifact.kind == ArtifactKind::synthetic) genomes_[artifact.id] = decode_genome(artifact.payload);
  seen_ids_.insert(artifact.id);
  const std::string id = artifact.id;
  EditSet diff = diff_for_locked(artifact);
  const PoolVersion v = log_.size() + 1;
  entries_.emplace(id, PoolEntry{std::move(artifact), score, EntryStatus::confirmed, v});
  best_score_ = std::max(best_score_, score);
  std::string summary = render_summary(UpdateOp::insert_confirmed, id, score, diff);
  return append_locked(UpdateOp::insert_confirmed, id, std::move(summary), std::move(diff), score);
}

PoolVersion ArtifactPool::insert_speculative(Artifact artifact, double partial_score) {
  check_score(partial_score);
  std::lock_guard lock(mu_);
  if (seen_ids_.count(artifact.id)) throw DuplicateArtifact("artifact '" + artifact.id + "' already present");
  if (!(partial_score > best_score_)) {
    throw GateFailed("partial score " + std::to_string(partial_score) +
                     " does not exceed best " + std::to_string(best_score_));
  }
  if (artifact.parent_id && !seen_ids_.count(*artifact.parent_id)) {
    throw InvariantViolation("parent '" + *artifact.parent_id + "' was never in the pool");
  }
  if (artifact.kind == ArtifactKind::synthetic) genomes_[artifact.id] = decode_genome(artifact.payload);
  seen_ids_.insert(artifact.id);
  const std::string id = artifact.id;
  EditSet diff = diff_for_locked(artifact);
  const PoolVersion v = log_.size() + 1;
  entries_.emplace(id, PoolEntry{std::move(artifact), partial_score, EntryStatus::speculative, v});
  std::string summary = render_summary(UpdateOp::insert_speculative, id, partial_score, diff);
  return append_locked(UpdateOp::insert_speculative, id, std::move(summary), std::move(diff),
                       partial_score);
}

ConfirmResult ArtifactPool::confirm_speculative(const std::string& artifact_id, double full_score) {
  check_score(full_score);
  std::lock_guard lock(mu_);
  auto it = entries_.find(artifact_id);
  if (it == entries_.end() || it->second.status != EntryStatus::speculative) {
    throw NotSpeculative("artifact '" + artifact_id + "' is not a speculative entry");
  }
  if (full_score > best_score_) {
    it->second.status = EntryStatus::confirmed;
    it->second.score = full_score;
    best_score_ = full_score;
    EditSet diff = diff_for_locked(it->second.artifact);
    std::string summary = render_summary(UpdateOp::confirm, artifact_id, full_score, diff);
    auto v = append_locked(UpdateOp::confirm, artifact_id, std::move(summary), std::move(diff),
                           full_score);
    return {ConfirmOutcome::confirmed, v};
  }
  entries_.erase(it);
  std::string summary = render_summary(UpdateOp::rollback, artifact_id, full_score, {});
  auto v = append_locked(UpdateOp::rollback, artifact_id, std::move(summary), {}, full_score);
  return {ConfirmOutcome::rolled_back, v};
}

std::vector<PoolUpdate> ArtifactPool::updates_between(PoolVersion v_from, PoolVersion v_to) const {
  std::lock_guard lock(mu_);
  if (v_from > v_to || v_to > log_.size()) {
    throw RangeError("updates_between(" + std::to_string(v_from) + ", " + std::to_string(v_to) +
                     ") outside [0, " + std::to_string(log_.size()) + "]");
  }
  // log_[k] holds version k+1
  return {log_.begin() + static_cast<std::ptrdiff_t>(v_from),
          log_.begin() + static_cast<std::ptrdiff_t>(v_to)};
}

std::vector<const PoolEntry*> ArtifactPool::ordered_locked() const {
  std::vector<const PoolEntry*> out;
  out.reserve(entries_.size());
  for (const auto& [id, e] : entries_) out.push_back(&e);
  std::sort(out.begin(), out.end(), [](const PoolEntry* a, const PoolEntry* b) {
    return a->inserted_at_version < b->inserted_at_version;
  });
  return out;
}

Artifact ArtifactPool::select_candidate(const Selector& selector, std::mt19937_64& rng) const {
  std::lock_guard lock(mu_);
  std::vector<const PoolEntry*> eligible;
  for (const PoolEntry* e : ordered_locked()) {
    if (e->status == EntryStatus::confirmed || speculative_selectable_) eligible.push_back(e);
  }
  if (eligible.empty()) throw EmptyPool("no selectable artifact in pool");
  return selector.choose(eligible, rng).artifact;
}

PoolSnapshot ArtifactPool::snapshot() const {
  std::lock_guard lock(mu_);
  return {log_.size(), best_score_};
}

PoolVersion ArtifactPool::version() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

double ArtifactPool::best_score() const {
  std::lock_guard lock(mu_);
  return best_score_;
}

std::optional<PoolEntry> ArtifactPool::find(const std::string& artifact_id) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(artifact_id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::optional<PoolEntry> ArtifactPool::best_confirmed() const {
  std::lock_guard lock(mu_);
  const PoolEntry* best = nullptr;
  for (const PoolEntry* e : ordered_locked()) {
    if (e->status != EntryStatus::confirmed) continue;
    if (!best || e->score > best->score) best = e;
  }
  if (!best) return std::nullopt;
  return *best;
}

std::vector<PoolEntry> ArtifactPool::entries() const {
  std::lock_guard lock(mu_);
  std::vector<PoolEntry> out;
  for (const PoolEntry* e : ordered_locked()) out.push_back(*e);
  return out;
}

std::vector<PoolUpdate> ArtifactPool::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

nlohmann::json to_json(const PoolUpdate& u) {
  return {{"version", u.version},     {"op", to_string(u.op)}, {"artifact_id", u.artifact_id},
          {"summary", u.summary},     {"diff", genome_to_json(u.diff)}, {"score", u.score}};
}

PoolUpdate pool_update_from_json(const nlohmann::json& j) {
  PoolUpdate u;
  u.version = j.at("version").get<PoolVersion>();
  u.op = update_op_from_string(j.at("op").get<std::string>());
  u.artifact_id = j.at("artifact_id").get<std::string>();
  u.summary = j.value("summary", "");
  if (j.contains("diff")) u.diff = genome_from_json(j.at("diff"));
  u.score = j.value("score", 0.0);
  return u;
}

nlohmann::json ArtifactPool::to_checkpoint() const {
  std::lock_guard lock(mu_);
  nlohmann::json entries = nlohmann::json::array();
  for (const PoolEntry* e : ordered_locked()) {
    nlohmann::json a = {{"artifact_id", e->artifact.id},
                        {"payload", e->artifact.payload},
                        {"kind", to_string(e->artifact.kind)},
                        {"created_at_version", e->artifact.created_at_version},
                        {"score", e->score},
                        {"status", e->status == EntryStatus::confirmed ? "confirmed" : "speculative"},
                        {"inserted_at_version", e->inserted_at_version}};
    a["parent_id"] = e->artifact.parent_id ? nlohmann::json(*e->artifact.parent_id) : nlohmann::json();
    entries.push_back(std::move(a));
  }
  nlohmann::json log = nlohmann::json::array();
  for (const auto& u : log_) log.push_back(to_json(u));
  return {{"version", log_.size()}, {"entries", std::move(entries)}, {"log", std::move(log)}};
}

void ArtifactPool::write_checkpoint(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot open checkpoint file " + path.string());
  out << to_checkpoint().dump(2) << '\n';
}

}  // namespace evoflux
