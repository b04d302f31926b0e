#include "sketch3d/cli.hpp"

int main(int argc, char **argv) { return sketch3d::cli::run(argc, argv); }
