// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gcrnn/cli.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep large activation buffers on the heap instead of mapping them per op.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  std::vector<std::string> args(argv + 1, argv + argc);
  return gcrnn::run_cli(args, std::cout, std::cerr);
}
