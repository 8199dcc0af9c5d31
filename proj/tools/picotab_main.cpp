#include "picotab/cli.hpp"

int main(int argc, char** argv) { return picotab::run_cli(argc, argv); }
