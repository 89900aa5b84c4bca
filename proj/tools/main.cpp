#include "cli.hpp"

int main(int argc, char** argv) { return factordiff::cli::run(argc, argv); }
