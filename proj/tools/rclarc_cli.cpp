#include "rclarc/cli.hpp"

int main(int argc, char** argv) { return rclarc::run_cli(argc, argv); }
