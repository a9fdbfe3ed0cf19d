#include "tdf/cli.hpp"

int main(int argc, char** argv) { return tdf::run_cli(argc, argv); }
