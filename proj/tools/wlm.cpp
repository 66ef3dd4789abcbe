#include "wlm/cli.hpp"
#include "wlm/memory.hpp"

int main(int argc, char** argv) {
  wlm::tune_allocator();
  return wlm::cli::run(argc, argv);
}
