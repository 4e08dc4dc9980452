#include "mvpost/pipeline.hpp"

int main(int argc, char** argv) { return mvpost::pipeline::cli_main(argc, argv); }
