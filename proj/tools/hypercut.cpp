#include "hypercut/cli/cli.hpp"

int main(int argc, char** argv) { return hypercut::cli::dispatch(argc, argv); }
