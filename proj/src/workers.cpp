#include "modlens/workers.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

#include "modlens/errors.hpp"

namespace modlens {

int worker_cap() {
  int cap = omp_get_max_threads();
  if (const char* env = std::getenv("MODLENS_NUM_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw ConfigError("MODLENS_NUM_WORKERS must be a positive integer, got '" +
                        std::string(env) + "'");
    if (v < cap) cap = static_cast<int>(v);
  }
  return cap;
}

}  // namespace modlens
