#include "terracer/cli.hpp"

int main(int argc, char** argv) { return terracer::cli::run(argc, argv); }
