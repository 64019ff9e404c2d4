#include "call_helper.h"

__global__ void apply_gain(float *samples, int n) {
    int i = blockIdx.x * blockDim.x + threadIdx.x;
    if (i < n) {
        samples[i] = CALL_HELPER(samples[i]);
    }
}
