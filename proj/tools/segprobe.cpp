#include "segprobe/cli.hpp"

int main(int argc, char** argv) { return segprobe::cli::run(argc, argv); }
