#include "fedforget/harness/cli.hpp"

int main(int argc, char** argv) { return ff::cli(argc, argv); }
