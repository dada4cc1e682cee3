#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <utility>

namespace sprnet {

using LogSink = std::function<void(const std::string&)>;

namespace detail {
inline LogSink& warning_sink() {
  static LogSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}
}  // namespace detail

/// Replaces the warning sink; returns the previous one.
inline LogSink set_warning_sink(LogSink sink) {
  return std::exchange(detail::warning_sink(), std::move(sink));
}

inline void log_warning(const std::string& msg) {
  if (detail::warning_sink()) detail::warning_sink()(msg);
}

}  // namespace sprnet
