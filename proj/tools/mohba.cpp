#include "mohba/cli.hpp"

int main(int argc, char** argv) { return mohba::cli::run(argc, argv); }
