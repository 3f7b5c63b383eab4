#include "glcal/cli.hpp"

int main(int argc, char** argv) { return glcal::cli::run(argc, argv); }
