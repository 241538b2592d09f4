#include "dear/cli.hpp"

int main(int argc, char** argv) { return dear::cli::run(argc, argv); }
