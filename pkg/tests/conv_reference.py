"""Naive nested-loop convolution references, independent of the production path."""

import numpy as np


def naive_conv3d(x, w, b, s, p):
    c_in, d, h, wd = x.shape
    c_out, _, k, _, _ = w.shape
    xp = np.zeros((c_in, d + 2 * p, h + 2 * p, wd + 2 * p))
    xp[:, p:p + d, p:p + h, p:p + wd] = x
    od, oh, ow = [(n + 2 * p - k) // s + 1 for n in (d, h, wd)]
    y = np.zeros((c_out, od, oh, ow))
    for o in range(c_out):
        for i in range(od):
            for j in range(oh):
                for l in range(ow):
                    acc = b[o]
                    for c in range(c_in):
                        for a in range(k):
                            for bb in range(k):
                                for cc in range(k):
                                    acc += w[o, c, a, bb, cc] * xp[c, i * s + a, j * s + bb, l * s + cc]
                    y[o, i, j, l] = acc
    return y


def naive_conv_transpose3d(x, w, b, s, p, op):
    c_in, d, h, wd = x.shape
    _, c_out, k, _, _ = w.shape
    full = [(n - 1) * s + k + op for n in (d, h, wd)]
    buf = np.zeros((c_out, *full))
    for c in range(c_in):
        for i in range(d):
            for j in range(h):
                for l in range(wd):
                    for o in range(c_out):
                        for a in range(k):
                            for bb in range(k):
                                for cc in range(k):
                                    buf[o, i * s + a, j * s + bb, l * s + cc] += x[c, i, j, l] * w[c, o, a, bb, cc]
    out = [(n - 1) * s - 2 * p + k + op for n in (d, h, wd)]
    y = buf[:, p:p + out[0], p:p + out[1], p:p + out[2]].copy()
    y += np.asarray(b)[:, None, None, None]
    return y
