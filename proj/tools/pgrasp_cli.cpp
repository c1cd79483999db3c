#include "pgrasp/harness.hpp"

int main(int argc, char** argv) { return pgrasp::cli(argc, argv); }
