#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace clfd {

// Error categories surfaced by the CLI as "error: <category>: <message>".
enum class ErrorCategory { usage, config, io, data, numeric, internal };

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::internal: return "internal";
  }
  return "internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

namespace detail {

template <class... Args>
std::string format_msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

template <class... Args>
[[noreturn]] void fail(ErrorCategory category, Args&&... args) {
  throw Error(category, detail::format_msg(std::forward<Args>(args)...));
}

template <class... Args>
void check(bool condition, ErrorCategory category, Args&&... args) {
  if (!condition) fail(category, std::forward<Args>(args)...);
}

}  // namespace clfd
