#include <string>
#include <vector>

#include "revcurl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return revcurl::cli::dispatch(std::move(args));
}
