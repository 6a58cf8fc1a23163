#include "dif/runtime.hpp"

#include <gtest/gtest.h>

int main(int argc, char** argv) {
  dif::configure_allocator();
  ::testing::InitGoogleTest(&argc, argv);
  return RUN_ALL_TESTS();
}
