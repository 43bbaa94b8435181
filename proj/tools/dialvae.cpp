#include "dialvae/cli.hpp"

int main(int argc, char** argv) {
  return dialvae::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
