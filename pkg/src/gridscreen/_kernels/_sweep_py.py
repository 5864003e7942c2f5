"""Reference batched propagation kernel in pure numpy.

Semantics contract shared with the compiled backend: scenarios of one
fault group advance in lockstep as columns of a Fortran-ordered state
matrix, the exceedance indicator is evaluated at the left endpoint of
every step before the state moves, and the fault window populations are
column prefixes (callers sort scenarios by decreasing fault duration).
"""

import numpy as np


def run_batch(e_f, j_f, e_0, j_0, gain, p_plus, p_minus, x0, dw,
              m_dyn, m_ind, flow_scale, fr, to, faulted, retained,
              counts, max_ratio, x_out):
    """Advance one batch of same-branch scenarios over the full horizon.

    Parameters
    ----------
    e_f, j_f : ndarray
        Affine step operator during the fault window, (2n, 2n) and (2n,).
    e_0, j_0 : ndarray
        Post-clearing operator.
    gain : ndarray
        Multiplicative noise gain vector (2n,); zeros disable noise.
    p_plus, p_minus : int
        State indices probed by the noise (faulted branch angle pair).
    x0 : ndarray
        Shared initial state (2n,).
    dw : ndarray
        Brownian increments, (K, B) with step-major layout.
    m_dyn : ndarray
        (K,) ints; column prefix still inside the fault window at step k.
    m_ind : ndarray
        (K,) ints; column prefix whose faulted-line indicator is derated
        at sample k (fault closed on the right, so m_ind >= m_dyn).
    flow_scale : ndarray
        (E,) susceptance / limit per line.
    fr, to : ndarray
        (E,) state-vector indices of each line's terminal angles.
    faulted : int
        Row of the faulted line in the flow arrays, or -1 for no fault.
    retained : float
        Susceptance fraction kept on the faulted line while derated.
    counts : ndarray
        (E, B) int32 output; accumulates samples with ratio > 1.
    max_ratio : ndarray
        (B,) float output; running max ratio, caller-initialised.
    x_out : ndarray
        (2n, B) output; receives the states at the horizon.
    """
    k_steps, b = dw.shape
    x = np.empty((x0.shape[0], b), order="F")
    x[:] = x0[:, None]
    flows = np.empty((fr.shape[0], b))
    tmp = np.empty_like(flows)
    # diverging scenarios overflow on purpose; the caller screens the
    # final states for non-finite columns
    with np.errstate(over="ignore", invalid="ignore"):
        _run(e_f, j_f, e_0, j_0, gain, p_plus, p_minus, dw, m_dyn, m_ind,
             flow_scale, fr, to, faulted, retained, counts, max_ratio,
             x, flows, tmp, k_steps, b)
    x_out[:] = x


def _run(e_f, j_f, e_0, j_0, gain, p_plus, p_minus, dw, m_dyn, m_ind,
         flow_scale, fr, to, faulted, retained, counts, max_ratio,
         x, flows, tmp, k_steps, b):
    for k in range(k_steps):
        np.take(x, fr, axis=0, out=flows)
        np.take(x, to, axis=0, out=tmp)
        flows -= tmp
        np.abs(flows, out=flows)
        flows *= flow_scale[:, None]
        if faulted >= 0 and m_ind[k] > 0:
            flows[faulted, : m_ind[k]] *= retained
        counts += flows > 1.0
        np.maximum(max_ratio, flows.max(axis=0), out=max_ratio)
        m = int(m_dyn[k])
        if m > 0:
            xa = x[:, :m]
            amp = (xa[p_plus] - xa[p_minus]) * dw[k, :m]
            x[:, :m] = e_f @ (xa + gain[:, None] * amp[None, :]) + j_f[:, None]
        if m < b:
            x[:, m:] = e_0 @ x[:, m:] + j_0[:, None]
