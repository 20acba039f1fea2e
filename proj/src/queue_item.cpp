#include "evoflux/queue_item.hpp"

#include <algorithm>

#include "evoflux/errors.hpp"

namespace evoflux {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

nlohmann::json trajectory_to_json(const Trajectory& t) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : t.checks) {
    checks.push_back({{"feature", c.feature}, {"value", c.value}, {"target", c.target}, {"match", c.match}});
  }
  return {{"sample_id", t.sample_id}, {"checks", std::move(checks)}};
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  t.sample_id = j.at("sample_id").get<std::string>();
  for (const auto& c : j.at("checks")) {
    t.checks.push_back({c.at("feature").get<std::string>(), c.at("value").get<int>(),
                        c.at("target").get<int>(), c.at("match").get<bool>()});
  }
  return t;
}

}  // namespace

bool Trajectory::failed() const {
  return std::any_of(checks.begin(), checks.end(), [](const FeatureCheck& c) { return !c.match; });
}

nlohmann::json payload_to_json(const Payload& p) {
  return std::visit(
      Overloaded{
          [](const SelectPayload& s) -> nlohmann::json {
            return {{"type", "select"}, {"artifact_id", s.artifact_id}, {"genome", genome_to_json(s.genome)}};
          },
          [](const FeedbackPayload& f) -> nlohmann::json {
            nlohmann::json trajs = nlohmann::json::array();
            for (const auto& t : f.trajectories) trajs.push_back(trajectory_to_json(t));
            return {{"type", "feedback"},
                    {"parent_id", f.parent_id},
                    {"parent", genome_to_json(f.parent)},
                    {"trajectories", std::move(trajs)},
                    {"corrections", genome_to_json(f.corrections)}};
          },
          [](const CandidatePayload& c) -> nlohmann::json {
            return {{"type", "candidate"},
                    {"artifact_id", c.artifact_id},
                    {"parent_id", c.parent_id},
                    {"genome", genome_to_json(c.genome)},
                    {"edits", genome_to_json(c.edits)},
                    {"created_at_version", c.created_at_version}};
          },
          [](const OpaquePayload& o) -> nlohmann::json { return {{"type", "opaque"}, {"text", o.text}}; },
      },
      p);
}

Payload payload_from_json(const nlohmann::json& j) {
  try {
    const auto type = j.at("type").get<std::string>();
    if (type == "select") {
      return SelectPayload{j.at("artifact_id").get<std::string>(), genome_from_json(j.at("genome"))};
    }
    if (type == "feedback") {
      FeedbackPayload f;
      f.parent_id = j.at("parent_id").get<std::string>();
      f.parent = genome_from_json(j.at("parent"));
      for (const auto& t : j.at("trajectories")) f.trajectories.push_back(trajectory_from_json(t));
      f.corrections = genome_from_json(j.at("corrections"));
      return f;
    }
    if (type == "candidate") {
      CandidatePayload c;
      c.artifact_id = j.at("artifact_id").get<std::string>();
      c.parent_id = j.at("parent_id").get<std::string>();
      c.genome = genome_from_json(j.at("genome"));
      c.edits = genome_from_json(j.at("edits"));
      c.created_at_version = j.at("created_at_version").get<PoolVersion>();
      return c;
    }
    if (type == "opaque") return OpaquePayload{j.at("text").get<std::string>()};
    throw FormatError("unknown payload type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed payload: ") + e.what());
  }
}

const EditSet* payload_edits(const Payload& p) {
  if (const auto* f = std::get_if<FeedbackPayload>(&p)) return &f->corrections;
  if (const auto* c = std::get_if<CandidatePayload>(&p)) return &c->edits;
  return nullptr;
}

Payload rebase_payload(const Payload& p, const std::string& base_id, const Genome& base,
                       const EditSet& surviving, PoolVersion at_version) {
  if (const auto* f = std::get_if<FeedbackPayload>(&p)) {
    FeedbackPayload out;
    out.parent_id = base_id;
    out.parent = base;
    out.corrections = surviving;
    // Keep only trajectories that still motivate a surviving correction.
    for (const auto& t : f->trajectories) {
      Trajectory kept{t.sample_id, {}};
      for (const auto& c : t.checks) {
        if (c.match || surviving.count(c.feature)) kept.checks.push_back(c);
      }
      out.trajectories.push_back(std::move(kept));
    }
    return out;
  }
  if (const auto* c = std::get_if<CandidatePayload>(&p)) {
    CandidatePayload out;
    out.artifact_id = c->artifact_id;
    out.parent_id = base_id;
    out.genome = apply_edits(base, surviving);
    out.edits = surviving;
    out.created_at_version = at_version;
    return out;
  }
  throw FormatError("payload has no structured edits to rebase");
}

}  // namespace evoflux
