#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <queue>
#include <set>
#include <vector>

#include "qsvpn/common/sim_time.hpp"

namespace qsvpn::sim {

/// Single-threaded discrete-event loop. Events run in (at, sequence) order;
/// the loop owns the clock and never moves it backwards.
class EventLoop {
 public:
  using Action = std::function<void()>;

  SimTime now() const noexcept { return now_; }

  // Throws ScenarioPanic when `at` lies in the past.
  std::uint64_t schedule_at(SimTime at, Action action);
  std::uint64_t schedule_in(SimDuration delay, Action action);
  void cancel(std::uint64_t seq);

  // Runs the earliest event; false when nothing is queued.
  bool step();
  // Runs every event with at <= t, then parks the clock at t.
  std::size_t run_until(SimTime t);
  std::size_t run();

  std::optional<SimTime> next_time() const;
  std::size_t pending() const noexcept { return queue_.size() - cancelled_.size(); }
  std::uint64_t executed() const noexcept { return executed_; }

 private:
  struct Event {
    SimTime at;
    std::uint64_t seq;
    Action action;
  };
  struct Later {
    bool operator()(const Event& x, const Event& y) const {
      return x.at != y.at ? x.at > y.at : x.seq > y.seq;
    }
  };
  void drop_cancelled_head() const;

  SimTime now_{0};
  std::uint64_t next_seq_ = 0;
  std::uint64_t executed_ = 0;
  mutable std::priority_queue<Event, std::vector<Event>, Later> queue_;
  mutable std::set<std::uint64_t> cancelled_;
};

}  // namespace qsvpn::sim
