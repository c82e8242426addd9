#pragma once

#include <cstdio>
#include <mutex>

namespace voxsr {

inline std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}

template <typename... Args>
void log_warn(const char* fmt, Args... args) {
    std::lock_guard<std::mutex> lock(log_mutex());
    std::fprintf(stderr, "[voxsr] warning: ");
    if constexpr (sizeof...(args) == 0)
        std::fputs(fmt, stderr);
    else
        std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
}

template <typename... Args>
void log_info(const char* fmt, Args... args) {
    std::lock_guard<std::mutex> lock(log_mutex());
    std::fprintf(stderr, "[voxsr] ");
    if constexpr (sizeof...(args) == 0)
        std::fputs(fmt, stderr);
    else
        std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
}

}  // namespace voxsr
