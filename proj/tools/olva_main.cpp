#include "olva/experiment.hpp"

int main(int argc, char** argv) { return olva::experiment::run_cli(argc, argv); }
