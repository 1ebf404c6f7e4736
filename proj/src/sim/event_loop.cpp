#include "qsvpn/sim/event_loop.hpp"

#include "qsvpn/common/error.hpp"

namespace qsvpn::sim {

std::uint64_t EventLoop::schedule_at(SimTime at, Action action) {
  if (at < now_)
    fail(ErrorCode::ScenarioPanic, "event scheduled in the past: at " + format_ms(at) + " ms, now " + format_ms(now_) + " ms");
  std::uint64_t seq = next_seq_++;
  queue_.push(Event{at, seq, std::move(action)});
  return seq;
}

std::uint64_t EventLoop::schedule_in(SimDuration delay, Action action) {
  return schedule_at(now_ + delay, std::move(action));
}

void EventLoop::cancel(std::uint64_t seq) {
  if (seq < next_seq_) cancelled_.insert(seq);
}

void EventLoop::drop_cancelled_head() const {
  while (!queue_.empty()) {
    auto it = cancelled_.find(queue_.top().seq);
    if (it == cancelled_.end()) return;
    cancelled_.erase(it);
    queue_.pop();
  }
}

bool EventLoop::step() {
  drop_cancelled_head();
  if (queue_.empty()) return false;
  Event ev = queue_.top();
  queue_.pop();
  now_ = ev.at;
  ++executed_;
  ev.action();
  return true;
}

std::size_t EventLoop::run_until(SimTime t) {
  std::size_t n = 0;
  for (;;) {
    drop_cancelled_head();
    if (queue_.empty() || queue_.top().at > t) break;
    step();
    ++n;
  }
  if (t > now_) now_ = t;
  return n;
}

std::size_t EventLoop::run() {
  std::size_t n = 0;
  while (step()) ++n;
  return n;
}

std::optional<SimTime> EventLoop::next_time() const {
  drop_cancelled_head();
  if (queue_.empty()) return std::nullopt;
  return queue_.top().at;
}

}  // namespace qsvpn::sim
