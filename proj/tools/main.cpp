#include "sllmr/cli.hpp"

int main(int argc, char** argv) { return sllmr::cli::main(argc, argv); }
