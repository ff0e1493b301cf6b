#include "clfd/cli.hpp"

int main(int argc, char** argv) { return clfd::cli::run(argc, argv); }
