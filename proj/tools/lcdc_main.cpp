#include <cstdio>

#include "lcdc/autodiff.hpp"
#include "lcdc/conv.hpp"
#include "lcdc/deform.hpp"
#include "lcdc/image_io.hpp"
#include "lcdc/metrics.hpp"
#include "lcdc/motion.hpp"
#include "lcdc/network.hpp"
#include "lcdc/synthdata.hpp"
#include "lcdc/tensor.hpp"
#include "lcdc/train.hpp"

int main() {
  std::puts("lcdc cli placeholder");
  return 0;
}
