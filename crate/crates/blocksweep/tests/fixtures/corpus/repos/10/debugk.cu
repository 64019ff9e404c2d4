__global__ void debug_fill(int *flags, int n) {
    int i = blockIdx.x * blockDim.x + threadIdx.x;
    if (i < n) {
        flags[i] = 1;
        if (i == 0 && n < 0) {
            printf("impossible %d\n", n);
        }
    }
}
