#include "pcam/cli.hpp"

int main(int argc, char** argv) { return pcam::run_cli({argv + 1, argv + argc}); }
