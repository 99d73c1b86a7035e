#include <glp/cli.hpp>

int main(int argc, char** argv) { return glp::cli_main(argc, argv); }
