#include "tgpt/cli.hpp"

int main(int argc, char** argv) { return tgpt::cli::run(argc, argv); }
