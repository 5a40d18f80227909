#include "thzag/common.hpp"

#include <cstdio>

namespace thzag {

std::string format_exact(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace thzag
