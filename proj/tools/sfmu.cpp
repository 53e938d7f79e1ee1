#include "sfmu_cli.hpp"

int main(int argc, char** argv) { return sfmu::cli::run_cli(argc, argv); }
