#include "phi/cli.hpp"

int main(int argc, char** argv) { return phi::dispatch(argc, argv); }
