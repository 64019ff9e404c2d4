__device__ float gain_helper(float v) {
    return v * 2.0f;
}
