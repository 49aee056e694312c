#include "tforce/cli.hpp"

int main(int argc, char** argv) { return tforce::cli::run_cli(argc, argv); }
