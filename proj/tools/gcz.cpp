#include "gcz/cli.hpp"

int main(int argc, char** argv) { return gcz::cli::run(argc, argv); }
