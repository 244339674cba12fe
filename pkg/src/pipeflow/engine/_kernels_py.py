"""Pure-Python twin of the compiled convolution kernel.

Same loop nest, same arithmetic, same status codes; used when the extension
is not built or ``PIPEFLOW_PURE_PYTHON=1`` is set.
"""

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1

OK = 0
ADDEND_OVERFLOW = 1
PSUM_OVERFLOW = 2


def wrap32(x):
    return ((x + (1 << 31)) & 0xFFFFFFFF) - (1 << 31)


def conv_block(window, weights, shifts, psum, k_rows, stride, c_par, m_par, groups, debug):
    """Accumulate one K-row block into ``psum`` in place.

    ``window`` is (C_in, rows, padded_width) with padding already materialized,
    ``weights`` is (M, C_in/groups, R, S), ``shifts`` holds the left shift of
    every input channel and ``psum`` is (M, K, W_out), pre-loaded with the
    aligned bias.  Returns ``(status, m, k, w)``; ``status`` is nonzero only in
    debug mode, when an addend or a running psum leaves the 32-bit range.
    """
    n_m, c_group, n_r, n_s = weights.shape
    w_out = psum.shape[2]
    m_group = n_m // groups
    win = window.tolist()
    wts = weights.tolist()
    sh = shifts.tolist()
    acc = psum.tolist()
    for mm in range(0, n_m, m_par):
        m_end = min(mm + m_par, n_m)
        for cc in range(0, c_group, c_par):
            c_end = min(cc + c_par, c_group)
            for k in range(k_rows):
                row0 = k * stride
                for m in range(mm, m_end):
                    c_base = (m // m_group) * c_group
                    acc_mk = acc[m][k]
                    w_m = wts[m]
                    for c in range(cc, c_end):
                        cin = c_base + c
                        plane = win[cin]
                        w_mc = w_m[c]
                        shift = sh[cin]
                        for w in range(w_out):
                            col0 = w * stride
                            total = acc_mk[w]
                            for r in range(n_r):
                                line = plane[row0 + r]
                                w_mcr = w_mc[r]
                                for s in range(n_s):
                                    addend = (line[col0 + s] * w_mcr[s]) << shift
                                    if addend < INT32_MIN or addend > INT32_MAX:
                                        if debug:
                                            acc_to_array(acc, psum)
                                            return ADDEND_OVERFLOW, m, k, w
                                        addend = wrap32(addend)
                                    total += addend
                                    if total < INT32_MIN or total > INT32_MAX:
                                        if debug:
                                            acc_to_array(acc, psum)
                                            return PSUM_OVERFLOW, m, k, w
                                        total = wrap32(total)
                            acc_mk[w] = total
    acc_to_array(acc, psum)
    return OK, -1, -1, -1


def acc_to_array(acc, psum):
    psum[...] = acc
