__device__ float legacy_scale(float v) {
    return v * 0.5f;
}

int main() {
    return 0;
}
