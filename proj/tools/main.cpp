#include "cli/cli.hpp"

int main(int argc, char** argv) { return posmed::cli::dispatch(argc, argv); }
