#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace man {

using i64 = std::int64_t;
using u64 = std::uint64_t;
using u32 = std::uint32_t;
using u16 = std::uint16_t;
using u8 = std::uint8_t;

// Error taxonomy mirrored by the CLI exit codes:
//   ConfigError -> 1, DataError -> 2, NumericError -> 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
inline void str_cat(std::ostringstream&) {}
template <class A, class... Rest>
void str_cat(std::ostringstream& os, const A& a, const Rest&... rest) {
    os << a;
    str_cat(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string cat(const Args&... args) {
    std::ostringstream os;
    detail::str_cat(os, args...);
    return os.str();
}

#define MAN_CHECK(cond, ...)                                      \
    do {                                                          \
        if (!(cond)) throw std::invalid_argument(man::cat(__VA_ARGS__)); \
    } while (0)

}  // namespace man
