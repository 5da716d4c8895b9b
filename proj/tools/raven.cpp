#include <string>
#include <vector>

#include "raven/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return raven::dispatch(args);
}
