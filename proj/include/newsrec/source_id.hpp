#pragma once

#include <compare>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "newsrec/error.hpp"
#include "newsrec/text.hpp"

namespace newsrec {

/// Canonical identity of a quoted speaker: the entity URI when the mention
/// was linked, otherwise the normalized mention text.
class SourceId {
  public:
    SourceId() = default;
    explicit SourceId(std::string canonical) : m_canonical(std::move(canonical)) {
        if (m_canonical.empty()) {
            fail_user("SourceId must be non-empty");
        }
    }

    [[nodiscard]] const std::string& str() const noexcept { return m_canonical; }

    auto operator<=>(const SourceId&) const = default;
    bool operator==(const SourceId&) const = default;

    friend std::ostream& operator<<(std::ostream& os, const SourceId& id) { return os << id.m_canonical; }

  private:
    std::string m_canonical;
};

inline SourceId resolve_source(std::string_view mention, const std::optional<std::string>& link = {}) {
    if (link && !link->empty()) {
        return SourceId(*link);
    }
    auto normalized = normalize_name(mention);
    if (normalized.empty()) {
        fail_user("cannot resolve an empty speaker mention");
    }
    return SourceId(std::move(normalized));
}

}  // namespace newsrec

template <>
struct std::hash<newsrec::SourceId> {
    std::size_t operator()(const newsrec::SourceId& id) const noexcept {
        return std::hash<std::string>{}(id.str());
    }
};
