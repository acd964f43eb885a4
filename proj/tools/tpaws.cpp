#include "tpaws/cli.hpp"

int main(int argc, char** argv) { return tpaws::cli::run(argc, argv); }
