#include "cyclewalk/cli.hpp"

int main(int argc, char** argv) { return cyclewalk::run_cli(argc, argv); }
