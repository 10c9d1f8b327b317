#include "cli.hpp"

int main(int argc, char** argv) { return scssl::cli::run({argv, argv + argc}); }
