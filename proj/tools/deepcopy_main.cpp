#include "deepcopy/cli.hpp"

int main(int argc, char** argv) { return deepcopy::cli::run(argc, argv); }
