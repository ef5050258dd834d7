#include "radet/io/cli.hpp"

int main(int argc, char** argv) { return radet::io::run_cli(argc, argv); }
