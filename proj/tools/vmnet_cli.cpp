#include "vmnet/cli.hpp"

int main(int argc, char** argv) { return vmnet::cli::run(std::vector<std::string>(argv, argv + argc)); }
