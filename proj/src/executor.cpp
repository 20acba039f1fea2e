#include "evoflux/executor.hpp"

#include <algorithm>

namespace evoflux {

void VirtualEventLoop::schedule_at(double t, Task task) {
  queue_.push(Entry{std::max(t, now_), seq_++, std::move(task)});
}

void VirtualEventLoop::run_until(double t_end, const std::function<bool()>& stop) {
  while (!queue_.empty()) {
    if (stop && stop()) return;
    if (queue_.top().t > t_end) return;
    // priority_queue::top is const; the task is moved out before pop
    Entry e = std::move(const_cast<Entry&>(queue_.top()));
    queue_.pop();
    now_ = e.t;
    ++executed_;
    e.task();
  }
}

RealtimeEventLoop::RealtimeEventLoop() : start_(std::chrono::steady_clock::now()) {}

double RealtimeEventLoop::now() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

void RealtimeEventLoop::schedule_at(double t, Task task) {
  {
    std::lock_guard lock(mu_);
    timers_.push(Entry{t, seq_++, std::move(task)});
  }
  cv_.notify_one();
}

void RealtimeEventLoop::expect_external() {
  std::lock_guard lock(mu_);
  ++outstanding_external_;
}

void RealtimeEventLoop::post(Task task) {
  {
    std::lock_guard lock(mu_);
    posted_.push_back(std::move(task));
    if (outstanding_external_ > 0) --outstanding_external_;
  }
  cv_.notify_one();
}

void RealtimeEventLoop::run_until(double t_end, const std::function<bool()>& stop) {
  using namespace std::chrono;
  for (;;) {
    if (stop && stop()) return;
    std::vector<Task> batch;
    {
      std::unique_lock lock(mu_);
      for (;;) {
        const double t = now();
        if (!posted_.empty()) break;
        if (!timers_.empty() && timers_.top().t <= t) break;
        if (t >= t_end) return;
        if (timers_.empty() && outstanding_external_ == 0) return;
        double wake = t_end;
        if (!timers_.empty()) wake = std::min(wake, timers_.top().t);
        cv_.wait_for(lock, duration<double>(std::max(0.0, wake - t)));
      }
      batch.swap(posted_);
      const double t = now();
      while (!timers_.empty() && timers_.top().t <= t) {
        batch.push_back(std::move(const_cast<Entry&>(timers_.top()).task));
        timers_.pop();
      }
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch[i]();
      if (stop && stop()) {
        std::lock_guard lock(mu_);
        for (std::size_t j = i + 1; j < batch.size(); ++j) posted_.push_back(std::move(batch[j]));
        return;
      }
    }
  }
}

}  // namespace evoflux
