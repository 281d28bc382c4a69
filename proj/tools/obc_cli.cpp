#include "obc/cli.hpp"

int main(int argc, char** argv) { return obc::cli::run_cli(argc, argv); }
