#include "shakedrop/cli.hpp"

int main(int argc, char** argv) { return shakedrop::run_cli(argc, argv); }
