/*
 * __global__ void fake_in_block_comment(int *a, int n) { a[0] = n; }
 */

// __global__ void fake_in_line_comment(float *b) {}

static const char *kBanner = "__global__ void fake_in_string(int x) { if (x) {";

__global__ void real_kernel(unsigned int *histogram, int num_bins, int stride) {
    int i = blockIdx.x * blockDim.x + threadIdx.x;
    if (i * stride < num_bins) {
        histogram[i * stride] += 1u;
    }
}

__global__ void mask_apply(int *mask_buf, int *vals, int size) {
    int i = blockIdx.x * blockDim.x + threadIdx.x;
    if (i < size && mask_buf[i]) {
        vals[i] = 0;
    }
}
