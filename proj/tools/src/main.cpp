#include <iostream>

#include "stt/cli.hpp"

int main(int argc, char** argv) {
  return stt::cli::run(argc, argv, {std::cin, std::cout, std::cerr});
}
