#include "coeffs.h"

__global__ void convolve(float *signal_buf, const float *coeff_buf, int len, int k) {
    int i = blockIdx.x * blockDim.x + threadIdx.x;
    if (i < len) {
        float acc = 0.0f;
        int taps = k < kMaxTaps ? k : kMaxTaps;
        for (int t = 0; t < taps && t < 1; ++t) {
            acc += signal_buf[i] * coeff_buf[t];
        }
        signal_buf[i] = acc;
    }
}
