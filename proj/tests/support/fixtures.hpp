#pragma once

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "newsrec/corpus.hpp"
#include "newsrec/source_id.hpp"

namespace newsrec::testing {

/// A valid sample whose quote is the first word of its context.
inline Sample make_sample(std::string id, std::string context, std::string speaker,
                          std::string published_at = "2021-03-01T12:00:00Z",
                          std::optional<std::string> link = std::nullopt, std::string title = "Title") {
    Sample s;
    s.id = std::move(id);
    s.context = std::move(context);
    const auto space = s.context.find(' ');
    s.quote = s.context.substr(0, space);
    s.speaker_mention = std::move(speaker);
    s.speaker_link = std::move(link);
    s.speaker_type = SpeakerType::person;
    s.published_at = std::move(published_at);
    s.title = std::move(title);
    s.domain = "example.org";
    return s;
}

inline std::vector<SourceId> ids(std::initializer_list<const char*> names) {
    std::vector<SourceId> out;
    for (const char* n : names) out.emplace_back(n);
    return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        m_path = std::filesystem::temp_directory_path() /
                 ("newsrec-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(m_path);
        std::filesystem::create_directories(m_path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(m_path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return m_path; }
    [[nodiscard]] std::string file(const std::string& name) const { return (m_path / name).string(); }

  private:
    std::filesystem::path m_path;
};

}  // namespace newsrec::testing
