#pragma once

#include <stdexcept>
#include <string>

namespace glp {

// Contract violations throw; callers that can recover catch std::runtime_error.
#define GLP_REQUIRE(cond, msg)                                  \
    do {                                                        \
        if (!(cond)) throw std::runtime_error(std::string(msg)); \
    } while (0)

}  // namespace glp
