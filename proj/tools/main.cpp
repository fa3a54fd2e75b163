#include "minvar/cli.hpp"

int main(int argc, char** argv) {
  return minvar::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
