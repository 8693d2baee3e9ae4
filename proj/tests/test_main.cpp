#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <cstdlib>

#include <spdlog/spdlog.h>

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("PERFBENCH_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
