#include <iostream>
#include "skunet/gradcheck.hpp"
int main() {
  auto cases = skunet::gradcheck::default_suite(true);
  auto res = skunet::gradcheck::run_suite(cases, std::cout);
  return res.all_pass ? 0 : 1;
}
