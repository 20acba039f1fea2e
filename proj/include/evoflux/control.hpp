#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <string>
#include <vector>

namespace evoflux {

struct WorkerBounds {
  int k_min = 1;
  int k_max = 1;
};

/// Median of a non-empty list; the mean of the middle pair for even sizes.
double median(std::vector<double> values);

/// One control step. Stages below half the median rate gain a worker, stages
/// above twice the median lose one; results are clamped to [k_min, k_max].
/// Fewer than two rated stages leaves everything unchanged.
std::map<std::string, int> adjust_workers(const std::map<std::string, double>& rates,
                                          const std::map<std::string, int>& current,
                                          const std::map<std::string, WorkerBounds>& bounds);

/// Sliding count of a stage's downstream pushes.
class RateWindow {
 public:
  explicit RateWindow(double window_seconds);

  void record(double t);
  /// Pushes in (now - window, now] divided by the window length, where the
  /// window is shortened to `now` early in a run.
  double rate(double now);
  double window_seconds() const { return window_; }

 private:
  double window_;
  std::deque<double> pushes_;
};

/// Consecutive-pass counters for validation samples.
class PassHistory {
 public:
  void register_sample(const std::string& sample_id);
  bool contains(const std::string& sample_id) const { return passes_.count(sample_id) != 0; }

  /// Pass increments the streak, fail resets it. Throws UnknownSample.
  void record_validation_outcome(const std::string& sample_id, bool passed);
  int consecutive_passes(const std::string& sample_id) const;

 private:
  std::map<std::string, int> passes_;
};

inline constexpr int kDefaultDemotionStreak = 3;

/// Moves every sample inside the speculative prefix (first
/// ceil(alpha * |order|) positions) with a pass streak >= w to the back,
/// keeping the relative order of movers and of everyone else.
std::vector<std::string> reorder_validation(const PassHistory& history,
                                            const std::vector<std::string>& order, double alpha_spec,
                                            int w = kDefaultDemotionStreak);

}  // namespace evoflux
