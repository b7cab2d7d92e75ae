#include <dhp/pruner.hpp>
#include <iostream>
int main() {
  dhp::NetDescription d;
  dhp::HyperModel m(d, 1);
  std::cout << dhp::account(m.graph(), dhp::full_masks(m.graph())).flops_full << "\n";
}
