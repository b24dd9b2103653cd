#pragma once

#include <cstdint>

namespace clsr {

/// Thread-local tally of forward-pass FLOPs, filled in by the ops as they
/// execute. Only active inside a FlopScope; nested scopes each see the
/// FLOPs executed while they are alive.
class FlopScope {
 public:
  FlopScope();
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

  std::uint64_t flops() const { return flops_; }

  /// Adds to every scope alive on this thread.
  static void record(std::uint64_t flops);

 private:
  std::uint64_t flops_ = 0;
  FlopScope* parent_ = nullptr;
};

}  // namespace clsr
