#include "dqe/cli.hpp"

int main(int argc, char** argv) { return dqe::cli::run(argc, argv); }
