#include "siflow/cli.hpp"

int main(int argc, char** argv) { return siflow::cli::main(argc, argv); }
