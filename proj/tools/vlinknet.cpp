#include "vlink/cli.hpp"

int main(int argc, char** argv) { return vlink::cli::run_main(argc, argv); }
