#include "foam/common.hpp"

#include <cstdio>

namespace foam {

void log_notice(const std::string& msg) {
  std::fprintf(stderr, "[foam] %s\n", msg.c_str());
}

}  // namespace foam
