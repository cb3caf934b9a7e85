#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wavefm {

// Error with a stable machine-checkable kind tag ("ShapeMismatch", "IoError", ...).
class error : public std::runtime_error {
public:
    error(std::string kind, const std::string& msg)
        : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

[[noreturn]] inline void fail(const std::string& kind, const std::string& msg) {
    throw error(kind, msg);
}

inline void require(bool cond, const std::string& kind, const std::string& msg) {
    if (!cond) fail(kind, msg);
}

template <typename S>
bool all_finite(const std::vector<S>& v) {
    for (S x : v) {
        if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
}

inline bool is_pow2(size_t n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace wavefm
