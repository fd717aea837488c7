#include "gigaslide/cli.hpp"

int main(int argc, char** argv) { return gigaslide::cli::run(argc, argv); }
