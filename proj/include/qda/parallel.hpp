// parallel.hpp
// Process-wide worker count and a static-partition parallel_for.
//
// Tasks write only to their own output slot; callers never reduce across
// threads, so results do not depend on the worker count.

#pragma once

#include <cstddef>
#include <functional>

namespace qda {

void set_thread_count(unsigned n);  // 0 selects hardware concurrency
unsigned thread_count();

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace qda
