#include "zsslu/cli.hpp"

int main(int argc, char** argv) { return zsslu::cli::run(argc, argv); }
