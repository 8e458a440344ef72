#pragma once

// Deterministic discrete-event kernel.
//
// Agents expose the time to their next analytic event and a step function.
// In event-driven mode advance(dt) cuts the window at every analytic event so
// timestamps do not depend on dt; in fixed-step mode every agent is stepped
// exactly once per call. Events are ordered by (time, entity id).

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "macarons/device.hpp"
#include "macarons/error.hpp"

namespace macarons {

template <class S>
struct SimEvent {
  S time{};
  std::string entity;
  EventKind kind = EventKind::arrive;
  std::map<std::string, std::string> detail;

  bool operator==(const SimEvent&) const = default;
};

template <class S>
void sort_events(std::vector<SimEvent<S>>& events) {
  std::stable_sort(events.begin(), events.end(), [](const SimEvent<S>& a, const SimEvent<S>& b) {
    if (a.time != b.time) return a.time < b.time;
    return a.entity < b.entity;
  });
}

template <class S>
class SimAgent {
 public:
  virtual ~SimAgent() = default;
  virtual const std::string& entity() const = 0;
  virtual std::optional<S> time_to_event() const = 0;
  virtual void step(const S& now, const S& dt, std::vector<SimEvent<S>>& out) = 0;
};

/// Issues commands to idle agents between kernel steps.
template <class S>
class SimController {
 public:
  virtual ~SimController() = default;
  /// Returns true if anything was issued or completed instantly.
  virtual bool dispatch(const S& now, std::vector<SimEvent<S>>& out) = 0;
  virtual bool done() const = 0;
};

enum class KernelMode { event_driven, fixed_step };

template <class S>
class Kernel {
 public:
  explicit Kernel(KernelMode mode = KernelMode::event_driven) : mode_(mode) {}

  /// Agents are not owned; they are stepped in entity-id order.
  void add(SimAgent<S>& agent) {
    agents_.push_back(&agent);
    std::stable_sort(agents_.begin(), agents_.end(),
                     [](const SimAgent<S>* a, const SimAgent<S>* b) { return a->entity() < b->entity(); });
  }

  const S& now() const { return now_; }
  KernelMode mode() const { return mode_; }

  std::optional<S> next_event_in() const {
    std::optional<S> best;
    for (const auto* a : agents_) {
      if (auto t = a->time_to_event(); t && (!best || *t < *best)) best = t;
    }
    return best;
  }

  std::vector<SimEvent<S>> advance(const S& dt) {
    if (!(dt > S(0))) throw Error(ErrorCode::parameter, "advance needs dt > 0");
    std::vector<SimEvent<S>> out;
    if (mode_ == KernelMode::fixed_step) {
      for (auto* a : agents_) a->step(now_, dt, out);
      now_ += dt;
    } else {
      S remaining = dt;
      while (remaining > S(0)) {
        S slice = remaining;
        if (auto t = next_event_in(); t && *t < slice) slice = *t;
        for (auto* a : agents_) a->step(now_, slice, out);
        now_ += slice;
        remaining -= slice;
      }
    }
    sort_events(out);
    return out;
  }

  /// Event-driven run: jump from event to event until the controller is done.
  std::vector<SimEvent<S>> run(SimController<S>& controller) {
    std::vector<SimEvent<S>> trace;
    int idle_rounds = 0;
    for (;;) {
      std::vector<SimEvent<S>> batch;
      bool progressed = controller.dispatch(now_, batch);
      auto t = next_event_in();
      if (t) {
        // Zero-length events (instant completions) are flushed with a zero step.
        S slice = *t;
        if (slice > S(0)) {
          auto ev = advance(slice);
          batch.insert(batch.end(), ev.begin(), ev.end());
        } else {
          for (auto* a : agents_) a->step(now_, S(0), batch);
        }
        idle_rounds = 0;
      } else if (controller.done()) {
        sort_events(batch);
        trace.insert(trace.end(), batch.begin(), batch.end());
        break;
      } else if (!progressed && ++idle_rounds > 2) {
        throw Error(ErrorCode::scenario, "simulation stalled: controller has work but no agent can progress");
      }
      sort_events(batch);
      trace.insert(trace.end(), batch.begin(), batch.end());
    }
    // Instant follow-ups land in a later batch at the same time; the stable
    // sort restores (time, entity) order and keeps each entity's own order.
    sort_events(trace);
    return trace;
  }

 private:
  KernelMode mode_;
  S now_{};
  std::vector<SimAgent<S>*> agents_;
};

}  // namespace macarons
