// Command-line entry point. Subcommands are wired in cli.hpp.
#include <cstdio>

int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::fprintf(stderr, "gph: not yet wired\n");
  return 1;
}
