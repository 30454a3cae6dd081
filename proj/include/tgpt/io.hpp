#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgpt::io {

namespace detail {
inline std::vector<std::filesystem::path>*& audit_sink() {
    thread_local std::vector<std::filesystem::path>* sink = nullptr;
    return sink;
}
}  // namespace detail

/// Records every file opened for reading through this namespace on the
/// current thread while alive.
class FileAudit {
public:
    FileAudit() : prev_(detail::audit_sink()) { detail::audit_sink() = &opened_; }
    ~FileAudit() { detail::audit_sink() = prev_; }
    FileAudit(const FileAudit&) = delete;
    FileAudit& operator=(const FileAudit&) = delete;

    [[nodiscard]] const std::vector<std::filesystem::path>& opened() const { return opened_; }

private:
    std::vector<std::filesystem::path> opened_;
    std::vector<std::filesystem::path>* prev_;
};

inline std::ifstream open_read(const std::filesystem::path& path, bool binary = false) {
    if (auto* sink = detail::audit_sink()) sink->push_back(path);
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
    return in;
}

inline std::string read_text(const std::filesystem::path& path) {
    auto in = open_read(path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_binary(const std::filesystem::path& path) {
    auto in = open_read(path, true);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file.
inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write to " + tmp.string() + " failed");
    }
    std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_atomic(path, text);
}

}  // namespace tgpt::io
