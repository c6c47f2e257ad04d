#include <cstdio>

int main() {
    std::puts("snls: not yet wired");
    return 0;
}
