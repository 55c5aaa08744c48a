#include <kslab/cli.hpp>

int main(int argc, char** argv) { return ks::cli_main(argc, argv); }
