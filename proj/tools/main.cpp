#include "sleeprad/cli.hpp"

int main(int argc, char** argv) { return sleeprad::cli::run(argc, argv); }
