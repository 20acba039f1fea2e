#pragma once

#include <map>
#include <string>

#include <json.hpp>

namespace evoflux {

/// Structured genome of a synthetic artifact: feature name -> integer value.
using Genome = std::map<std::string, int>;

/// A set of field edits (feature -> new value). Also used as the structured
/// diff attached to pool updates.
using EditSet = std::map<std::string, int>;

/// Returns `base` with every edit applied.
Genome apply_edits(Genome base, const EditSet& edits);

/// Fields of `to` that are absent from or differ in `from`.
EditSet diff_genomes(const Genome& from, const Genome& to);

nlohmann::json genome_to_json(const Genome& g);
Genome genome_from_json(const nlohmann::json& j);

/// Serialized artifact payload for kind=synthetic. Compact JSON, keys sorted.
std::string encode_genome(const Genome& g);

/// Throws FormatError if `payload` is not a JSON object of integers.
Genome decode_genome(const std::string& payload);

}  // namespace evoflux
