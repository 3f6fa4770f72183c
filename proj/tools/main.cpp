#include "cli.hpp"

int main(int argc, char** argv) { return vrt_cli::cli_main(argc, argv); }
