#include "mricascade/cli.hpp"

int main(int argc, char** argv) { return mricascade::cli::run_cli(argc, argv); }
