# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernel: the mm/cc/k/m/c/w/r/s loop nest of one K-row block."""
from libc.stdint cimport int64_t

cdef int64_t INT32_MIN = -(1 << 31)
cdef int64_t INT32_MAX = (1 << 31) - 1

OK = 0
ADDEND_OVERFLOW = 1
PSUM_OVERFLOW = 2


cdef inline int64_t wrap32(int64_t x) nogil:
    return ((x + (<int64_t>1 << 31)) & <int64_t>0xFFFFFFFF) - (<int64_t>1 << 31)


def conv_block(const int64_t[:, :, ::1] window, const int64_t[:, :, :, ::1] weights,
               const int64_t[::1] shifts, int64_t[:, :, ::1] psum,
               Py_ssize_t k_rows, Py_ssize_t stride, Py_ssize_t c_par, Py_ssize_t m_par,
               Py_ssize_t groups, bint debug):
    """Accumulate one K-row block into ``psum`` in place; see ``_kernels_py.conv_block``."""
    cdef Py_ssize_t n_m = weights.shape[0], c_group = weights.shape[1]
    cdef Py_ssize_t n_r = weights.shape[2], n_s = weights.shape[3]
    cdef Py_ssize_t w_out = psum.shape[2]
    cdef Py_ssize_t m_group = n_m // groups
    cdef Py_ssize_t m_tiles = (n_m + m_par - 1) // m_par
    cdef Py_ssize_t c_tiles = (c_group + c_par - 1) // c_par
    cdef Py_ssize_t tm, tc, mm, cc, k, m, c, w, r, s, m_end, c_end, c_base, cin, row0, col0
    cdef int64_t total, addend, shift
    cdef int status = 0
    cdef Py_ssize_t bad_m = -1, bad_k = -1, bad_w = -1
    with nogil:
        for tm in range(m_tiles):
            mm = tm * m_par
            m_end = min(mm + m_par, n_m)
            for tc in range(c_tiles):
                cc = tc * c_par
                c_end = min(cc + c_par, c_group)
                for k in range(k_rows):
                    row0 = k * stride
                    for m in range(mm, m_end):
                        c_base = (m // m_group) * c_group
                        for c in range(cc, c_end):
                            cin = c_base + c
                            shift = shifts[cin]
                            for w in range(w_out):
                                col0 = w * stride
                                total = psum[m, k, w]
                                for r in range(n_r):
                                    for s in range(n_s):
                                        addend = (window[cin, row0 + r, col0 + s]
                                                  * weights[m, c, r, s]) << shift
                                        if addend < INT32_MIN or addend > INT32_MAX:
                                            if debug:
                                                status = 1
                                                break
                                            addend = wrap32(addend)
                                        total = total + addend
                                        if total < INT32_MIN or total > INT32_MAX:
                                            if debug:
                                                status = 2
                                                break
                                            total = wrap32(total)
                                    if status:
                                        break
                                if status:
                                    bad_m, bad_k, bad_w = m, k, w
                                    break
                                psum[m, k, w] = total
                            if status:
                                break
                        if status:
                            break
                    if status:
                        break
                if status:
                    break
            if status:
                break
    return status, bad_m, bad_k, bad_w
