#include "avey/cli.hpp"

int main(int argc, char** argv) { return avey::run_cli_main(argc, argv); }
