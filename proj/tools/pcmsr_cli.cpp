#include <pcmsr/cli.hpp>

int main(int argc, char** argv) { return pcmsr::cli::cli_main(argc, argv); }
