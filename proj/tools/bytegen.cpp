#include <string>
#include <vector>

#include "bytegen/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return bytegen::cli::dispatch(std::move(args));
}
