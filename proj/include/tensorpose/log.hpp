// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <iostream>
#include <mutex>
#include <string_view>

namespace tensorpose {

namespace detail {
inline std::atomic<std::size_t>& warning_counter() {
  static std::atomic<std::size_t> n{0};
  return n;
}
inline std::atomic<bool>& warnings_muted() {
  static std::atomic<bool> muted{false};
  return muted;
}
}  // namespace detail

inline std::size_t warning_count() { return detail::warning_counter().load(); }
inline void mute_warnings(bool muted) { detail::warnings_muted() = muted; }

inline void log_warning(std::string_view msg) {
  ++detail::warning_counter();
  if (detail::warnings_muted()) return;
  static std::mutex m;
  std::lock_guard lock(m);
  std::clog << "warning: " << msg << '\n';
}

}  // namespace tensorpose
