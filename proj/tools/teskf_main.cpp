#include "teskf/cli.hpp"

int main(int argc, char **argv) { return teskf::cli_main(argc, argv); }
