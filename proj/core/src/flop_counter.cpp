#include "clsr/flop_counter.hpp"

namespace clsr {

namespace {
thread_local FlopScope* g_innermost = nullptr;
}

FlopScope::FlopScope() : parent_(g_innermost) { g_innermost = this; }

FlopScope::~FlopScope() { g_innermost = parent_; }

void FlopScope::record(std::uint64_t flops) {
  for (FlopScope* s = g_innermost; s != nullptr; s = s->parent_) s->flops_ += flops;
}

}  // namespace clsr
