#include "collagan/cli.hpp"

int main(int argc, char** argv) { return collagan::cli::run(argc, argv); }
