#include "gjem/cli.hpp"

int main(int argc, char** argv) { return gjem::run_cli(argc, argv); }
