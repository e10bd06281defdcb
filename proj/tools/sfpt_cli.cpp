#include "sfpt/cli.hpp"

int main(int argc, char** argv) { return sfpt::run_cli(argc, argv); }
