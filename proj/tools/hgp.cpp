#include "hgp/cli.hpp"

int main(int argc, char** argv) { return hgp::run(argc, argv); }
