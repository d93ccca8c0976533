#include "nsync/common.hpp"

#include <cstdio>
#include <cstdlib>

namespace nsync {

std::string fmt_double(double x) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

}  // namespace nsync
