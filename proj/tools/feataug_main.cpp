#include "feataug/cli.hpp"

int main(int argc, char** argv) { return feataug::cli::run(argc, argv); }
