#include "posespace/cli.h"

int main(int argc, char** argv) { return posespace::run_cli(argc, argv); }
