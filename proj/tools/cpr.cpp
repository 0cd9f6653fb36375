#include "cpr/cli.hpp"

int main(int argc, char** argv) { return cpr::cli::run_cli(argc, argv); }
