#include "cli.hpp"

int main(int argc, char** argv) { return nedcal::cli::run(std::vector<std::string>(argv, argv + argc)); }
