#include "cli.hpp"

int main(int argc, char** argv) { return afb::run_cli(argc, argv); }
