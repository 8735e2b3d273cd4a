#include "commands.hpp"

int main(int argc, char** argv) { return zoforge::cli::run(argc, argv); }
