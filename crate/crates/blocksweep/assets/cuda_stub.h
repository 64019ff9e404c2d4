// Minimal host-side stand-in for the CUDA runtime surface the generated
// harnesses touch. Compiling with `g++ -x c++ -include cuda_stub.h` turns a
// harness into a plain CPU program: the kernel body runs once per launch on
// thread (0,0,0), which is enough to smoke-test code generation, the fix
// loop, and the stdout contract without nvcc or a GPU.
//
// Deliberately self-contained: it declares the handful of libc symbols it
// needs instead of including standard headers, so a kernel that forgot its
// own includes still fails to compile the same way it would under nvcc.
#ifndef BLOCKSWEEP_CUDA_STUB_H
#define BLOCKSWEEP_CUDA_STUB_H
#ifndef __CUDACC__

#define __global__
#define __device__
#define __host__
#define __constant__
#define __shared__ static
#define __restrict__
#define __forceinline__ inline
#define __noinline__
#define __launch_bounds__(...)

extern "C" void *malloc(unsigned long);
extern "C" void free(void *);
extern "C" void *memset(void *, int, unsigned long);
extern "C" long clock(void);

struct dim3 {
    unsigned int x, y, z;
    dim3(unsigned int xx = 1, unsigned int yy = 1, unsigned int zz = 1)
        : x(xx), y(yy), z(zz) {}
};

struct bs_uint3 {
    unsigned int x, y, z;
};

static bs_uint3 threadIdx = {0, 0, 0};
static bs_uint3 blockIdx = {0, 0, 0};
static dim3 blockDim(1, 1, 1);
static dim3 gridDim(1, 1, 1);

typedef int cudaError_t;
static const cudaError_t cudaSuccess = 0;

static inline cudaError_t cudaMalloc(void **ptr, unsigned long bytes) {
    *ptr = malloc(bytes);
    return cudaSuccess;
}

static inline cudaError_t cudaFree(void *ptr) {
    free(ptr);
    return cudaSuccess;
}

static inline cudaError_t cudaMemset(void *ptr, int value, unsigned long bytes) {
    memset(ptr, value, bytes);
    return cudaSuccess;
}

static inline cudaError_t cudaDeviceSynchronize(void) { return cudaSuccess; }
static inline cudaError_t cudaGetLastError(void) { return cudaSuccess; }
static inline cudaError_t cudaSetDevice(int) { return cudaSuccess; }

// events are handles like in the real API; they measure CPU time via
// clock(), which ticks in microseconds on glibc
typedef double *cudaEvent_t;

static inline cudaError_t cudaEventCreate(cudaEvent_t *event) {
    *event = (double *)malloc(sizeof(double));
    **event = 0.0;
    return cudaSuccess;
}

static inline cudaError_t cudaEventRecord(cudaEvent_t event) {
    *event = (double)clock();
    return cudaSuccess;
}

static inline cudaError_t cudaEventSynchronize(cudaEvent_t) { return cudaSuccess; }

static inline cudaError_t cudaEventElapsedTime(float *ms, cudaEvent_t start, cudaEvent_t stop) {
    double elapsed = (*stop - *start) / 1000.0;
    // the harness rejects non-positive runtimes; clock() can tick too
    // coarsely for tiny kernels, so floor at one microsecond
    *ms = elapsed > 0.001 ? (float)elapsed : 0.001f;
    return cudaSuccess;
}

static inline cudaError_t cudaEventDestroy(cudaEvent_t event) {
    free(event);
    return cudaSuccess;
}

#endif // !__CUDACC__
#endif // BLOCKSWEEP_CUDA_STUB_H
