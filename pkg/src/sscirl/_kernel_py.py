"""Pure-Python fallback for the episode simulation kernel.

The arithmetic here mirrors ``_kernel.pyx`` expression by expression so
that both produce bit-identical traces; keep the two in sync.
"""

import numpy as np

COMPILED = False


def simulate_segments(x, v, seg_mats, seg_steps, w, vnoise, p_nom, threshold, out):
    """Advance the 2-state resonant mode through piecewise-constant-gain segments.

    Parameters
    ----------
    x, v : float
        Initial mode position and velocity.
    seg_mats : (n_seg, 6) float array
        Per segment: a11, a12, a21, a22, b1, b2 of the exact one-step
        discretization (state transition plus zero-order-hold input column).
    seg_steps : (n_seg,) int array
        Steps per segment; must sum to len(out) - 1.
    w : float array, len(out) - 1
        Process-noise force per step.
    vnoise : float array, len(out)
        Measurement noise per sample.
    p_nom : float
        Nominal operating point added to the measured output.
    threshold : float
        Divergence bound on the Euclidean norm of the state.
    out : float array
        Output buffer for measured samples; out[k] is the sample at step k.

    Returns
    -------
    (n_valid, x, v, diverged) : number of valid samples written, final
    state, and whether the divergence bound was hit.
    """
    thr2 = threshold * threshold
    out[0] = p_nom + x + vnoise[0]
    k = 1
    for s in range(len(seg_steps)):
        a11 = float(seg_mats[s, 0])
        a12 = float(seg_mats[s, 1])
        a21 = float(seg_mats[s, 2])
        a22 = float(seg_mats[s, 3])
        b1 = float(seg_mats[s, 4])
        b2 = float(seg_mats[s, 5])
        for _ in range(int(seg_steps[s])):
            wk = float(w[k - 1])
            xn = a11 * x + a12 * v + b1 * wk
            vn = a21 * x + a22 * v + b2 * wk
            x = xn
            v = vn
            if x * x + v * v > thr2:
                return k, x, v, True
            out[k] = p_nom + x + float(vnoise[k])
            k += 1
    return k, x, v, False
