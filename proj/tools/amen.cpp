#include <string>
#include <vector>

#include "amen/cli.hpp"

int main(int argc, char** argv) {
  return amen::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
