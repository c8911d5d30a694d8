#pragma once

#include <atomic>
#include <cstdint>

namespace semfuse::instrumentation {

// Counts entries into the teacher-only path: the semantic prior provider and
// the SPA attention block. Inference through the student must leave it alone.
inline std::atomic<std::uint64_t>& teacher_path_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline void note_teacher_path() { teacher_path_counter().fetch_add(1, std::memory_order_relaxed); }
inline std::uint64_t teacher_path_calls() { return teacher_path_counter().load(); }

}  // namespace semfuse::instrumentation
