#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <spdlog/spdlog.h>

#include <cstdlib>

int main(int argc, char** argv) {
  // Library warnings are expected noise under adversarial backends.
  spdlog::set_level(std::getenv("AEGLE_TEST_LOG") ? spdlog::level::debug : spdlog::level::off);
  doctest::Context context(argc, argv);
  return context.run();
}
