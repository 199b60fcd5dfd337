#include "cli.hpp"

int main(int argc, char** argv) { return acacr::cli::run(argc, argv); }
