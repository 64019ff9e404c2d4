__device__ float square(float x) {
    return x * x;
}

__device__ float cube(float x) {
    return square(x) * x;
}

__device__ float unused_helper(float x) {
    return x + 42.0f;
}

__global__ void square_all(float *data, int n) {
    int i = blockIdx.x * blockDim.x + threadIdx.x;
    if (i < n) {
        data[i] = square(data[i]);
    }
}

__global__ void pow3_all(float *data, int n) {
    int i = blockIdx.x * blockDim.x + threadIdx.x;
    if (i < n) {
        data[i] = cube(data[i]);
    }
}

__global__ void scale_total(float *vec, int len, int stride) {
    int i = blockIdx.x * blockDim.x + threadIdx.x;
    if (i * stride < len) {
        vec[i * stride] = square(vec[i * stride]);
    }
}
