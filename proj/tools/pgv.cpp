#include "pgv/runner/cli.hpp"

int main(int argc, char** argv) { return pgv::runner::run_cli(argc, argv); }
