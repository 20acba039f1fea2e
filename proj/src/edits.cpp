#include "evoflux/edits.hpp"

#include "evoflux/errors.hpp"

namespace evoflux {

Genome apply_edits(Genome base, const EditSet& edits) {
  for (const auto& [field, value] : edits) base[field] = value;
  return base;
}

EditSet diff_genomes(const Genome& from, const Genome& to) {
  EditSet out;
  for (const auto& [field, value] : to) {
    auto it = from.find(field);
    if (it == from.end() || it->second != value) out.emplace(field, value);
  }
  return out;
}

nlohmann::json genome_to_json(const Genome& g) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [field, value] : g) j[field] = value;
  return j;
}

Genome genome_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("genome must be a JSON object");
  Genome g;
  for (const auto& [field, value] : j.items()) {
    if (!value.is_number_integer()) {
      throw FormatError("genome field '" + field + "' is not an integer");
    }
    g.emplace(field, value.get<int>());
  }
  return g;
}

std::string encode_genome(const Genome& g) { return genome_to_json(g).dump(); }

Genome decode_genome(const std::string& payload) {
  nlohmann::json j = nlohmann::json::parse(payload, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw FormatError("artifact payload is not JSON");
  return genome_from_json(j);
}

}  // namespace evoflux
