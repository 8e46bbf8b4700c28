#include "lata/pipeline.hpp"

int main(int argc, char** argv) { return lata::run_cli(argc, argv); }
