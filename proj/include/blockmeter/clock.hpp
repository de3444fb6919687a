#pragma once

#include "blockmeter/core.hpp"

#include <atomic>
#include <chrono>

namespace blockmeter {

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Nanos now() const = 0;
  virtual bool is_virtual() const = 0;
};

/// steady_clock offset so that construction time is 0.
class SteadyClock final : public Clock {
 public:
  SteadyClock() : epoch_(std::chrono::steady_clock::now()) {}

  Nanos now() const override {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - epoch_)
        .count();
  }
  bool is_virtual() const override { return false; }

  std::chrono::steady_clock::time_point to_time_point(Nanos t) const {
    return epoch_ + std::chrono::nanoseconds(t);
  }

 private:
  std::chrono::steady_clock::time_point epoch_;
};

/// Simulated time, moved forward only by its driver.
class VirtualClock final : public Clock {
 public:
  Nanos now() const override { return now_.load(std::memory_order_acquire); }
  bool is_virtual() const override { return true; }

  void set(Nanos t) {
    if (t < now()) throw Error("virtual clock cannot move backwards");
    now_.store(t, std::memory_order_release);
  }

 private:
  std::atomic<Nanos> now_{0};
};

}  // namespace blockmeter
