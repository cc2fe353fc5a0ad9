#include "esceval/store.hpp"

#include "esceval/error.hpp"
#include "esceval/util.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace esceval::store {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char *kModule = "store";

json header_json(const SchemaId &schema) { return {{"schema", schema.name}, {"version", schema.version}}; }

void ensure_parent(const std::string &path) {
    auto parent = fs::path(path).parent_path();
    if (!parent.empty())
        fs::create_directories(parent);
}

class FileLock {
  public:
    explicit FileLock(int fd) : fd_(fd) {
        while (::flock(fd_, LOCK_EX) != 0 && errno == EINTR) {
        }
    }
    ~FileLock() { ::flock(fd_, LOCK_UN); }
    FileLock(const FileLock &) = delete;
    FileLock &operator=(const FileLock &) = delete;

  private:
    int fd_;
};

void write_all(int fd, std::string_view data, const std::string &path) {
    while (!data.empty()) {
        auto n = ::write(fd, data.data(), data.size());
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw DataError(kModule, "write failed for " + path + ": " + std::strerror(errno));
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

} // namespace

const std::vector<SchemaId> &known_schemas() {
    static const std::vector<SchemaId> schemas = {
        {"role_card", 1},  {"transcript", 1},  {"annotation", 1}, {"pairwise", 1},
        {"metric", 1},     {"correlation", 1}, {"decision_log", 1}, {"correction_decision", 1},
        {"reference", 1},  {"request_log", 1}, {"scorer_prediction", 1},
    };
    return schemas;
}

int supported_version(std::string_view name) {
    for (const auto &s : known_schemas())
        if (s.name == name)
            return s.version;
    throw DataError(kModule, "unknown schema '" + std::string(name) + "'");
}

std::size_t save_json(const std::string &path, const SchemaId &schema, std::span<const json> records) {
    supported_version(schema.name);
    std::string content = header_json(schema).dump() + "\n";
    for (const auto &r : records)
        content += r.dump() + "\n";
    write_file_atomic(path, content);
    return records.size();
}

void append_json(const std::string &path, const SchemaId &schema, const json &record) {
    supported_version(schema.name);
    ensure_parent(path);
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0)
        throw DataError(kModule, "cannot open " + path + ": " + std::strerror(errno));
    struct Closer {
        int fd;
        ~Closer() { ::close(fd); }
    } closer{fd};
    FileLock lock(fd);
    struct stat st {};
    if (::fstat(fd, &st) != 0)
        throw DataError(kModule, "cannot stat " + path);
    std::string line;
    if (st.st_size == 0)
        line = header_json(schema).dump() + "\n";
    line += record.dump() + "\n";
    write_all(fd, line, path);
}

std::vector<Row> load_json(const std::string &path, std::string_view expected_schema) {
    std::vector<Row> out;
    std::ifstream in(path);
    if (!in) {
        if (!fs::exists(path))
            return out;
        throw DataError(kModule, "cannot read " + path);
    }
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty())
            continue;
        json value;
        try {
            value = json::parse(line);
        } catch (const json::exception &ex) {
            throw DataError(kModule, path + ":" + std::to_string(lineno) + ": malformed record (" + ex.what() + ")",
                            lineno);
        }
        if (!have_header) {
            if (!value.is_object() || !value.contains("schema") || !value.contains("version") ||
                !value["schema"].is_string() || !value["version"].is_number_integer())
                throw DataError(kModule, path + ":" + std::to_string(lineno) + ": missing schema header", lineno);
            const auto name = value["schema"].get<std::string>();
            const int version = value["version"].get<int>();
            int supported = 0;
            try {
                supported = supported_version(name);
            } catch (const DataError &) {
                throw DataError(kModule, path + ":" + std::to_string(lineno) + ": unknown schema '" + name + "'",
                                lineno);
            }
            if (name != expected_schema)
                throw DataError(kModule,
                                path + ": holds '" + name + "' records, expected '" + std::string(expected_schema) + "'",
                                lineno);
            if (version > supported)
                throw DataError(kModule,
                                path + ": schema '" + name + "' version " + std::to_string(version) +
                                    " is newer than supported version " + std::to_string(supported),
                                lineno);
            have_header = true;
            continue;
        }
        out.push_back({lineno, std::move(value)});
    }
    return out;
}

void fail_record(const std::string &path, std::size_t line, const std::string &what) {
    throw DataError(kModule, path + ":" + std::to_string(line) + ": " + what, line);
}

std::vector<std::string> list_record_files(const std::string &path) {
    std::vector<std::string> out;
    if (!fs::exists(path))
        return out;
    if (fs::is_regular_file(path)) {
        out.push_back(path);
        return out;
    }
    for (const auto &entry : fs::recursive_directory_iterator(path))
        if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
            out.push_back(entry.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

void write_file_atomic(const std::string &path, std::string_view content) {
    ensure_parent(path);
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw DataError(kModule, "cannot write " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out)
            throw DataError(kModule, "write failed for " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
        throw DataError(kModule, "cannot move " + tmp + " to " + path + ": " + ec.message());
}

} // namespace esceval::store
