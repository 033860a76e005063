#include "derain/cli.hpp"

int main(int argc, char** argv) { return derain::run_cli(argc, argv); }
