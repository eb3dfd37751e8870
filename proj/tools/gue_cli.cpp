#include "gue/cli.hpp"

int main(int argc, char** argv) { return gue::cli::run(argc, argv); }
