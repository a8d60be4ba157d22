#include "bregsparse/cli.hpp"

int main(int argc, char** argv) { return bregsparse::parse_and_run(argc, argv); }
