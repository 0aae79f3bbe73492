# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled episode simulation kernel.

Must stay arithmetically identical to ``_kernel_py.simulate_segments``:
same expression order, no fused multiply-add (built with -ffp-contract=off),
so that compiled and fallback traces agree bit for bit.
"""

COMPILED = True


def simulate_segments(double x, double v,
                      double[:, ::1] seg_mats, long[::1] seg_steps,
                      double[::1] w, double[::1] vnoise,
                      double p_nom, double threshold, double[::1] out):
    """See ``sscirl._kernel_py.simulate_segments`` for the contract."""
    cdef double thr2 = threshold * threshold
    cdef double a11, a12, a21, a22, b1, b2, wk, xn, vn
    cdef Py_ssize_t k = 1, s, i, nseg = seg_steps.shape[0]

    out[0] = p_nom + x + vnoise[0]
    for s in range(nseg):
        a11 = seg_mats[s, 0]
        a12 = seg_mats[s, 1]
        a21 = seg_mats[s, 2]
        a22 = seg_mats[s, 3]
        b1 = seg_mats[s, 4]
        b2 = seg_mats[s, 5]
        for i in range(seg_steps[s]):
            wk = w[k - 1]
            xn = a11 * x + a12 * v + b1 * wk
            vn = a21 * x + a22 * v + b2 * wk
            x = xn
            v = vn
            if x * x + v * v > thr2:
                return k, x, v, True
            out[k] = p_nom + x + vnoise[k]
            k += 1
    return k, x, v, False
