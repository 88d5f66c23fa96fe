//! Dense row-major helpers: GEMM, patch (space-to-depth) reshapes and
//! element-wise activations shared by the model's forward and backward passes.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type of model tensors (`f32` for real runs, `f64`
/// for gradient checks).
pub trait Scalar: Float + Default + Debug + Sum + Send + Sync + 'static {
    fn from_real(v: f64) -> Self;
    fn real(self) -> f64;

    /// Row-major `c = op(a) op(b) + beta c` through CBLAS.
    #[cfg(feature = "openblas")]
    #[allow(clippy::too_many_arguments)]
    fn blas_gemm(a_trans: bool, b_trans: bool, m: i32, n: i32, k: i32, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);
}

#[cfg(feature = "openblas")]
fn blas_transpose(t: bool) -> cblas_sys::CBLAS_TRANSPOSE {
    if t {
        cblas_sys::CBLAS_TRANSPOSE::CblasTrans
    } else {
        cblas_sys::CBLAS_TRANSPOSE::CblasNoTrans
    }
}

macro_rules! scalar_impl {
    ($t:ty, $gemm:ident) => {
        impl Scalar for $t {
            fn from_real(v: f64) -> Self {
                v as $t
            }
            fn real(self) -> f64 {
                self as f64
            }

            #[cfg(feature = "openblas")]
            fn blas_gemm(a_trans: bool, b_trans: bool, m: i32, n: i32, k: i32, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
                let lda = if a_trans { m } else { k };
                let ldb = if b_trans { k } else { n };
                // SAFETY: `matmul` checked every buffer against (m, n, k) and the
                // leading dimensions above describe those row-major layouts.
                unsafe {
                    cblas_sys::$gemm(
                        cblas_sys::CBLAS_LAYOUT::CblasRowMajor,
                        blas_transpose(a_trans),
                        blas_transpose(b_trans),
                        m,
                        n,
                        k,
                        1.0,
                        a.as_ptr(),
                        lda,
                        b.as_ptr(),
                        ldb,
                        beta,
                        c.as_mut_ptr(),
                        n,
                    );
                }
            }
        }
    };
}

scalar_impl!(f32, cblas_sgemm);
scalar_impl!(f64, cblas_dgemm);

#[cfg(feature = "openblas")]
extern "C" {
    fn openblas_get_corename() -> *const std::os::raw::c_char;
}

/// Kernel family OpenBLAS should be told to use when it has picked kernels
/// older than the CPU supports. OpenBLAS falls back to generic SSE3 kernels
/// when it does not recognise the CPU model (masked CPUID under many VMs).
/// The core is fixed when the library loads, so applying the answer means
/// setting `OPENBLAS_CORETYPE` before the process starts.
#[cfg(feature = "openblas")]
pub fn blas_kernel_override() -> Option<&'static str> {
    const AVX2_CORES: [&str; 6] = ["haswell", "skylakex", "cooperlake", "sapphirerapids", "zen", "excavator"];
    if std::env::var_os("OPENBLAS_CORETYPE").is_some() {
        return None;
    }
    // SAFETY: returns a pointer to a static NUL-terminated name.
    let name = unsafe { std::ffi::CStr::from_ptr(openblas_get_corename()) }
        .to_string_lossy()
        .to_lowercase();
    if AVX2_CORES.iter().any(|c| name.contains(c)) {
        return None;
    }
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::is_x86_feature_detected as has;
        if has!("avx512f") && has!("avx512bw") && has!("avx512dq") && has!("avx512vl") && has!("avx512cd") {
            return Some("SkylakeX");
        }
        if has!("avx2") && has!("fma") {
            return Some("Haswell");
        }
    }
    None
}

#[cfg(not(feature = "openblas"))]
pub fn blas_kernel_override() -> Option<&'static str> {
    None
}

/// Restarts the current process with `OPENBLAS_CORETYPE` set when
/// [`blas_kernel_override`] has an answer. Returns only if no restart is
/// needed or it failed.
pub fn ensure_blas_kernels() {
    #[cfg(unix)]
    if let Some(core) = blas_kernel_override() {
        use std::os::unix::process::CommandExt;
        if let Ok(exe) = std::env::current_exe() {
            let err = std::process::Command::new(exe)
                .args(std::env::args_os().skip(1))
                .env("OPENBLAS_CORETYPE", core)
                .exec();
            eprintln!("warning: could not restart with OPENBLAS_CORETYPE={core}: {err}");
        }
    }
}

/// `c (m x n) = [c +] op(a) * op(b)` with row-major storage. `a` is `m x k`
/// (or `k x m` when `a_trans`), `b` is `k x n` (or `n x k` when `b_trans`).
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Scalar>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "lhs size");
    assert_eq!(b.len(), k * n, "rhs size");
    assert_eq!(c.len(), m * n, "dst size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    if k <= RANK_UPDATE_MAX_K && !b_trans {
        rank_update(m, n, k, a, a_trans, b, c, accumulate);
        return;
    }
    gemm_dispatch(m, n, k, a, a_trans, b, b_trans, c, accumulate);
}

#[cfg(feature = "openblas")]
#[allow(clippy::too_many_arguments)]
fn gemm_dispatch<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], a_trans: bool, b: &[T], b_trans: bool, c: &mut [T], accumulate: bool) {
    let dim = |v: usize| i32::try_from(v).expect("matrix extent fits in i32");
    let beta = if accumulate { T::one() } else { T::zero() };
    T::blas_gemm(a_trans, b_trans, dim(m), dim(n), dim(k), a, b, beta, c);
}

#[cfg(all(feature = "gemm", not(feature = "openblas")))]
#[allow(clippy::too_many_arguments)]
fn gemm_dispatch<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], a_trans: bool, b: &[T], b_trans: bool, c: &mut [T], accumulate: bool) {
    let (a_cs, a_rs) = if a_trans { (m as isize, 1) } else { (1, k as isize) };
    let (b_cs, b_rs) = if b_trans { (k as isize, 1) } else { (1, n as isize) };
    // SAFETY: `matmul` pinned every buffer to the extents implied by (m, n, k)
    // and the strides describe exactly those row-major layouts.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            n as isize,
            accumulate,
            a.as_ptr(),
            a_cs,
            a_rs,
            b.as_ptr(),
            b_cs,
            b_rs,
            T::one(),
            T::one(),
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

#[cfg(not(any(feature = "openblas", feature = "gemm")))]
compile_error!("enable the `openblas` or the `gemm` feature of typeshift-core");

/// Largest inner dimension handled by [`rank_update`] instead of gemm, which
/// is slow on the thin per-batch weight gradients.
const RANK_UPDATE_MAX_K: usize = 16;

/// `c += sum_p a[:, p] b[p, :]` one output row at a time.
#[allow(clippy::too_many_arguments)]
fn rank_update<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], a_trans: bool, b: &[T], c: &mut [T], accumulate: bool) {
    for (i, row) in c.chunks_exact_mut(n).enumerate() {
        if !accumulate {
            row.iter_mut().for_each(|v| *v = T::zero());
        }
        for (p, b_row) in b.chunks_exact(n).enumerate() {
            let x = if a_trans { a[p * m + i] } else { a[i * k + p] };
            if x == T::zero() {
                continue;
            }
            for (v, &y) in row.iter_mut().zip(b_row) {
                *v = *v + x * y;
            }
        }
    }
}

/// Adds `bias` to every row of a `rows x bias.len()` matrix.
pub fn add_row_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = *v + *b;
        }
    }
}

/// Column sums of a `rows x cols` matrix, accumulated into `out`.
pub fn add_column_sums<T: Scalar>(x: &[T], out: &mut [T]) {
    for row in x.chunks_exact(out.len()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o = *o + *v;
        }
    }
}

/// Space-to-depth with 2x2 blocks: `batch x h x w x c` becomes
/// `(batch * h/2 * w/2) x (4c)`, block features ordered (dy, dx, channel).
pub fn patchify<T: Scalar>(x: &[T], batch: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    assert_eq!(x.len(), batch * h * w * c);
    assert!(h % 2 == 0 && w % 2 == 0, "patchify needs even extents");
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for i in 0..h2 {
            for j in 0..w2 {
                let row = ((b * h2 + i) * w2 + j) * 4 * c;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let src = ((b * h + 2 * i + dy) * w + 2 * j + dx) * c;
                        let dst = row + (dy * 2 + dx) * c;
                        out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify`]: `(batch * h * w) x (4c)` blocks become
/// `batch x 2h x 2w x c`.
pub fn unpatchify<T: Scalar>(x: &[T], batch: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    assert_eq!(x.len(), batch * h * w * 4 * c);
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for i in 0..h {
            for j in 0..w {
                let row = ((b * h + i) * w + j) * 4 * c;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let dst = ((b * h2 + 2 * i + dy) * w2 + 2 * j + dx) * c;
                        let src = row + (dy * 2 + dx) * c;
                        out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

/// Stride-1 2x2 transposed convolution scatter: input pixel (y, x) adds its
/// (dy, dx) block to output pixel (y + dy, x + dx); contributions falling
/// outside the `side x side` frame are cropped.
pub fn shift_scatter<T: Scalar>(blocks: &[T], batch: usize, side: usize, c: usize) -> Vec<T> {
    assert_eq!(blocks.len(), batch * side * side * 4 * c);
    let mut out = vec![T::zero(); batch * side * side * c];
    for b in 0..batch {
        for y in 0..side {
            for x in 0..side {
                let row = ((b * side + y) * side + x) * 4 * c;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (oy, ox) = (y + dy, x + dx);
                        if oy >= side || ox >= side {
                            continue;
                        }
                        let dst = ((b * side + oy) * side + ox) * c;
                        let src = row + (dy * 2 + dx) * c;
                        for k in 0..c {
                            out[dst + k] = out[dst + k] + blocks[src + k];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`shift_scatter`]: gathers the output gradient back into blocks.
pub fn shift_gather<T: Scalar>(grad: &[T], batch: usize, side: usize, c: usize) -> Vec<T> {
    assert_eq!(grad.len(), batch * side * side * c);
    let mut out = vec![T::zero(); grad.len() * 4];
    for b in 0..batch {
        for y in 0..side {
            for x in 0..side {
                let row = ((b * side + y) * side + x) * 4 * c;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (oy, ox) = (y + dy, x + dx);
                        if oy >= side || ox >= side {
                            continue;
                        }
                        let src = ((b * side + oy) * side + ox) * c;
                        let dst = row + (dy * 2 + dx) * c;
                        out[dst..dst + c].copy_from_slice(&grad[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

/// Per-channel bias added after a block reshape (every block position shares
/// the channel bias).
pub fn add_channel_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    add_row_bias(x, bias);
}

pub fn leaky_relu_in_place<T: Scalar>(x: &mut [T], slope: T) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Multiplies an upstream gradient by the leaky-ReLU derivative, read off the
/// activation's sign (positive slope keeps the sign of the pre-activation).
pub fn leaky_relu_backward<T: Scalar>(grad: &mut [T], activated: &[T], slope: T) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= T::zero() {
            *g = *g * slope;
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `target`, in the
/// overflow-free form `max(l, 0) - l * t + ln(1 + exp(-|l|))`.
pub fn bce_with_logits<T: Scalar>(logit: T, target: T) -> T {
    logit.max(T::zero()) - logit * target + (-logit.abs()).exp().ln_1p()
}
