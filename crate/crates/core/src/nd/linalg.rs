/// `c = alpha * a·b + beta * c` over strided row-major views.
///
/// `a` is `m × k`, `b` is `k × n`, `c` is `m × n`; strides are in elements.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(span(m, k, rsa, csa) <= a.len());
    debug_assert!(span(k, n, rsb, csb) <= b.len());
    debug_assert!(span(m, n, rsc, csc) <= c.len());
    // SAFETY: the debug asserts above state the bounds every caller upholds;
    // all strides are non-negative and index within the given slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

fn span(r: usize, c: usize, rs: isize, cs: isize) -> usize {
    if r == 0 || c == 0 {
        0
    } else {
        ((r - 1) as isize * rs + (c - 1) as isize * cs) as usize + 1
    }
}

/// Row-major `m × n` strides.
pub(crate) fn rm(cols: usize) -> (isize, isize) {
    (cols as isize, 1)
}

/// Transposed view of a row-major matrix with `cols` columns.
pub(crate) fn tr(cols: usize) -> (isize, isize) {
    (1, cols as isize)
}
