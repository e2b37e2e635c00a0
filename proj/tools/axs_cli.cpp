#include "axs/cli.hpp"

int main(int argc, char** argv) { return axs::cli::run(argc, argv); }
