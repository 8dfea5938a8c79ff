#include "leafdiag/cli.hpp"

int main(int argc, char** argv) { return leafdiag::cli::run(argc, argv); }
