#include "s4cv/cli/app.hpp"

int main(int argc, char** argv) { return s4cv::cli::run_cli(argc, argv); }
