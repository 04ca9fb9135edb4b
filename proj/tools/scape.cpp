#include <cstdio>

int main() {
  std::puts("scape: placeholder");
  return 0;
}
