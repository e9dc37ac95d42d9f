#include "commands.hpp"

int main(int argc, char** argv) { return cace::cli::run(argc, argv); }
