#include <iostream>

#include "entangle/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Causal effect estimation on dynamic graphs with entangled treatments"};
  entangle::cli::CliState state;
  entangle::cli::build_app(app, state);
  CLI11_PARSE(app, argc, argv);
  try {
    return entangle::cli::run(state, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
