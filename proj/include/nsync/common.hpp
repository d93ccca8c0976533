#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace nsync {

// Bad user input: config files, flags, incompatible files. CLI maps this to exit 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or other numerical breakdown. CLI maps this to exit 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void fmt_parts(std::ostringstream&) {}
template <typename T, typename... Rest>
void fmt_parts(std::ostringstream& os, const T& head, const Rest&... rest) {
    os << head;
    fmt_parts(os, rest...);
}
}  // namespace detail

template <typename... Parts>
std::string str_cat(const Parts&... parts) {
    std::ostringstream os;
    detail::fmt_parts(os, parts...);
    return os.str();
}

#define NSYNC_CHECK(cond, ...)                                                  \
    do {                                                                        \
        if (!(cond)) throw ::nsync::ConfigError(::nsync::str_cat(__VA_ARGS__)); \
    } while (0)

#define NSYNC_CHECK_NUM(cond, ...)                                               \
    do {                                                                         \
        if (!(cond)) throw ::nsync::NumericError(::nsync::str_cat(__VA_ARGS__)); \
    } while (0)

// Shortest text form that parses back to the same double.
std::string fmt_double(double x);

}  // namespace nsync
