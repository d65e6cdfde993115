#include "topocurate/pipeline.hpp"

int main(int argc, char** argv) {
  return topocurate::run_cli({argv + 1, argv + argc});
}
