#pragma once

#include <stdexcept>
#include <string>

namespace newsrec {

/// Failure classes; the CLI maps them onto exit codes 1, 2 and 3.
enum class ErrorKind { user, internal, endpoint };

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), m_kind(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return m_kind; }

  private:
    ErrorKind m_kind;
};

[[noreturn]] inline void fail_user(const std::string& what) { throw Error(ErrorKind::user, what); }
[[noreturn]] inline void fail_internal(const std::string& what) {
    throw Error(ErrorKind::internal, what);
}

}  // namespace newsrec
