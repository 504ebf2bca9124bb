#include "mcbm/cli.hpp"

int main(int argc, char** argv) { return mcbm::cli::run(argc, argv); }
