#include "evoflux/control.hpp"

#include <algorithm>
#include <cmath>

#include "evoflux/errors.hpp"

namespace evoflux {

double median(std::vector<double> values) {
  if (values.empty()) throw RangeError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

std::map<std::string, int> adjust_workers(const std::map<std::string, double>& rates,
                                          const std::map<std::string, int>& current,
                                          const std::map<std::string, WorkerBounds>& bounds) {
  std::map<std::string, int> next = current;
  std::vector<double> values;
  for (const auto& [stage, rate] : rates) {
    if (current.count(stage) && std::isfinite(rate) && rate >= 0.0) values.push_back(rate);
  }
  if (values.size() < 2) return next;
  const double m = median(values);
  for (const auto& [stage, rate] : rates) {
    auto it = next.find(stage);
    if (it == next.end() || !std::isfinite(rate) || rate < 0.0) continue;
    const WorkerBounds b = bounds.count(stage) ? bounds.at(stage) : WorkerBounds{it->second, it->second};
    int k = it->second;
    if (2.0 * rate < m) {
      k = std::min(k + 1, b.k_max);
    } else if (rate > 2.0 * m) {
      k = std::max(k - 1, b.k_min);
    }
    it->second = std::clamp(k, b.k_min, b.k_max);
  }
  return next;
}

RateWindow::RateWindow(double window_seconds) : window_(window_seconds) {
  if (!(window_seconds > 0.0)) throw ConfigError("rate window must be > 0");
}

void RateWindow::record(double t) { pushes_.push_back(t); }

double RateWindow::rate(double now) {
  while (!pushes_.empty() && pushes_.front() <= now - window_) pushes_.pop_front();
  const double span = std::min(window_, now);
  if (span <= 0.0) return 0.0;
  std::size_t n = 0;
  for (double t : pushes_) {
    if (t <= now) ++n;
  }
  return static_cast<double>(n) / span;
}

void PassHistory::register_sample(const std::string& sample_id) { passes_.emplace(sample_id, 0); }

void PassHistory::record_validation_outcome(const std::string& sample_id, bool passed) {
  auto it = passes_.find(sample_id);
  if (it == passes_.end()) throw UnknownSample("unknown validation sample '" + sample_id + "'");
  it->second = passed ? it->second + 1 : 0;
}

int PassHistory::consecutive_passes(const std::string& sample_id) const {
  auto it = passes_.find(sample_id);
  if (it == passes_.end()) throw UnknownSample("unknown validation sample '" + sample_id + "'");
  return it->second;
}

std::vector<std::string> reorder_validation(const PassHistory& history,
                                            const std::vector<std::string>& order, double alpha_spec,
                                            int w) {
  const std::size_t prefix =
      std::min(order.size(), static_cast<std::size_t>(std::ceil(alpha_spec * order.size() - 1e-9)));
  std::vector<std::string> stay;
  std::vector<std::string> movers;
  stay.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const bool demote = i < prefix && history.contains(order[i]) && history.consecutive_passes(order[i]) >= w;
    (demote ? movers : stay).push_back(order[i]);
  }
  stay.insert(stay.end(), movers.begin(), movers.end());
  return stay;
}

}  // namespace evoflux
