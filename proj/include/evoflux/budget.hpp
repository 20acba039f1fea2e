#pragma once

#include <cstdint>
#include <optional>

namespace evoflux {

/// When a run stops admitting new work: at `time_s` seconds (virtual or wall)
/// or after `max_pool_updates` accepted pool commits, whichever comes first.
struct Budget {
  double time_s = 0.0;
  std::optional<std::uint64_t> max_pool_updates;

  bool empty() const { return time_s <= 0.0 || (max_pool_updates && *max_pool_updates == 0); }
};

}  // namespace evoflux
