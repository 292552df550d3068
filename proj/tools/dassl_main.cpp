#include "dassl/cli.hpp"

int main(int argc, char** argv) { return dassl::cli::run(argc, argv); }
