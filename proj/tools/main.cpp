#include "cli.hpp"

int main(int argc, char** argv) { return cme::cli::run(argc, argv); }
