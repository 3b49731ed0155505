#include "modcon/cli.hpp"

int main(int argc, char** argv) { return modcon::run(argc, argv); }
