#include <cstdio>

int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::fprintf(stderr, "nonrigid_cli: no subcommands wired up yet\n");
  return 1;
}
