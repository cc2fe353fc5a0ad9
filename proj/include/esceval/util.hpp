#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace esceval {

enum class Lang { en, zh };

std::string to_string(Lang lang);
Lang parse_lang(std::string_view text);

using TimePoint = std::chrono::system_clock::time_point;
using Clock = std::function<TimePoint()>;

Clock system_clock();
// Returns `start`, then advances by `step` on every call. Thread-safe.
Clock stepping_clock(TimePoint start, std::chrono::milliseconds step = std::chrono::milliseconds{1});

// UTC ISO-8601 with millisecond precision, e.g. 2024-05-01T12:00:00.000Z
std::string format_utc(TimePoint tp);
TimePoint parse_utc(std::string_view text);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::string &path);

std::string to_lower_ascii(std::string_view text);
std::string trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);

// Decodes one UTF-8 code point starting at `pos`; returns its byte length (>= 1).
std::size_t utf8_length(std::string_view text, std::size_t pos);

// Runs fn(i) for i in [0, count) on up to `workers` threads. Exceptions from
// fn are rethrown (first one wins) after all workers join.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn &&fn) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                }
            }
        });
    }
    for (auto &t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

} // namespace esceval
