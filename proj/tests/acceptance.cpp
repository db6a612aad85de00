#include "cfl/cfl.hpp"
int main(){return 0;}
