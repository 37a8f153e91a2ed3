#include "nrsa/commands.hpp"

int main(int argc, char** argv) { return nrsa::commands::main(argc, argv); }
