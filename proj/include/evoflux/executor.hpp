#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <queue>
#include <vector>

namespace evoflux {

/// Time source plus callback scheduler driving the pipeline. All pipeline
/// state transitions run on the thread that calls run_until().
class Executor {
 public:
  using Task = std::function<void()>;

  virtual ~Executor() = default;

  /// Seconds since the start of the run.
  virtual double now() const = 0;
  virtual void schedule_at(double t, Task task) = 0;
  void schedule_after(double dt, Task task) { schedule_at(now() + dt, std::move(task)); }

  /// Announces that a task will later arrive through post() from another
  /// thread, so run_until() keeps waiting for it.
  virtual void expect_external() {}
  /// Thread-safe hand-off of a task to the loop thread.
  virtual void post(Task task) = 0;

  /// Runs tasks in time order until `stop()` is true, time passes `t_end`,
  /// or no work remains.
  virtual void run_until(double t_end, const std::function<bool()>& stop) = 0;

  virtual bool is_virtual() const = 0;
};

/// Discrete-event loop over a virtual clock. Ties on time are broken by
/// insertion sequence, which makes every run with the same inputs replay
/// identically.
class VirtualEventLoop final : public Executor {
 public:
  double now() const override { return now_; }
  void schedule_at(double t, Task task) override;
  void post(Task task) override { schedule_at(now_, std::move(task)); }
  void run_until(double t_end, const std::function<bool()>& stop) override;
  bool is_virtual() const override { return true; }

  std::size_t pending() const { return queue_.size(); }
  std::uint64_t executed() const { return executed_; }

 private:
  struct Entry {
    double t;
    std::uint64_t seq;
    Task task;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      return a.t != b.t ? a.t > b.t : a.seq > b.seq;
    }
  };

  double now_ = 0.0;
  std::uint64_t seq_ = 0;
  std::uint64_t executed_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, Later> queue_;
};

/// Wall-clock loop. Timers fire on the loop thread; other threads hand results
/// back through post().
class RealtimeEventLoop final : public Executor {
 public:
  RealtimeEventLoop();

  double now() const override;
  void schedule_at(double t, Task task) override;
  void expect_external() override;
  void post(Task task) override;
  void run_until(double t_end, const std::function<bool()>& stop) override;
  bool is_virtual() const override { return false; }

 private:
  struct Entry {
    double t;
    std::uint64_t seq;
    Task task;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      return a.t != b.t ? a.t > b.t : a.seq > b.seq;
    }
  };

  std::chrono::steady_clock::time_point start_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t seq_ = 0;
  std::size_t outstanding_external_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, Later> timers_;
  std::vector<Task> posted_;
};

}  // namespace evoflux
