#pragma once

#include "json.hpp"

#include <cstddef>
#include <exception>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace esceval::store {

// Every file starts with a header record {"schema": name, "version": n};
// each following line is one JSON record.
struct SchemaId {
    std::string name;
    int version = 1;
};

// Known schema names and the newest version this build reads.
const std::vector<SchemaId> &known_schemas();
int supported_version(std::string_view name); // throws DataError for unknown names

// Overwrites `path` (parent directories are created).
std::size_t save_json(const std::string &path, const SchemaId &schema, std::span<const nlohmann::json> records);

// Appends one record under an exclusive advisory lock, writing the header
// first when the file is new or empty. The record lands as a single write.
void append_json(const std::string &path, const SchemaId &schema, const nlohmann::json &record);

// Missing or empty file -> empty list. Throws DataError naming the 1-based
// line for malformed lines, a schema mismatch, or a version newer than
// supported.
struct Row {
    std::size_t line = 0;
    nlohmann::json value;
};
std::vector<Row> load_json(const std::string &path, std::string_view expected_schema);

// Rethrows a conversion failure as DataError naming path and line.
[[noreturn]] void fail_record(const std::string &path, std::size_t line, const std::string &what);

// Every *.jsonl under `dir` (recursively, sorted by path) or `path` itself
// when it names a file.
std::vector<std::string> list_record_files(const std::string &path);

// Serialization hooks. Specializations live in records.hpp.
template <typename T>
struct RecordTraits;

template <typename T>
std::size_t save(std::span<const T> records, const std::string &path) {
    std::vector<nlohmann::json> rows;
    rows.reserve(records.size());
    for (const auto &r : records)
        rows.push_back(RecordTraits<T>::to_json(r));
    return save_json(path, {std::string(RecordTraits<T>::schema), RecordTraits<T>::version}, rows);
}

template <typename T>
std::size_t save(const std::vector<T> &records, const std::string &path) {
    return save(std::span<const T>(records), path);
}

template <typename T>
void append(const T &record, const std::string &path) {
    append_json(path, {std::string(RecordTraits<T>::schema), RecordTraits<T>::version},
                RecordTraits<T>::to_json(record));
}

template <typename T>
std::vector<T> load(const std::string &path) {
    std::vector<T> out;
    for (const auto &row : load_json(path, RecordTraits<T>::schema)) {
        try {
            out.push_back(RecordTraits<T>::from_json(row.value));
        } catch (const std::exception &ex) {
            fail_record(path, row.line, ex.what());
        }
    }
    return out;
}

// Loads every record file found by list_record_files.
template <typename T>
std::vector<T> load_all(const std::string &path) {
    std::vector<T> out;
    for (const auto &file : list_record_files(path)) {
        auto part = load<T>(file);
        out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return out;
}

// Writes `content` to `path` via a temporary file and rename.
void write_file_atomic(const std::string &path, std::string_view content);

} // namespace esceval::store
