#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "macow/error.hpp"

int main(int argc, char** argv) {
  macow::set_warnings_enabled(false);
  doctest::Context context(argc, argv);
  return context.run();
}
