"""NumPy implementations of the inner-loop kernels.

These are the fallback used when the compiled ``_ckernels`` module is not
built, and the reference the compiled versions are tested against.
"""
import numpy as np


def unfold(x, window):
    """Stack sliding windows: ``[B, L, d] -> [B, L - window + 1, window * d]``."""
    b, length, d = x.shape
    steps = length - window + 1
    out = np.empty((b, steps, window * d), dtype=np.float64)
    for j in range(window):
        out[:, :, j * d:(j + 1) * d] = x[:, j:j + steps, :]
    return out


def fold(grad, window, length):
    """Adjoint of :func:`unfold`: sum window gradients back onto positions."""
    b, steps, wd = grad.shape
    d = wd // window
    out = np.zeros((b, length, d), dtype=np.float64)
    for j in range(window):
        out[:, j:j + steps, :] += grad[:, :, j * d:(j + 1) * d]
    return out


def max_pool(x, counts):
    """Max over the first ``counts[b]`` time steps of each row.

    Returns the pooled values and the (first) argmax positions.
    """
    b, steps, f = x.shape
    mask = np.arange(steps)[None, :] < counts[:, None]
    masked = np.where(mask[:, :, None], x, -np.inf)
    arg = np.argmax(masked, axis=1)
    out = np.take_along_axis(x, arg[:, None, :], axis=1)[:, 0, :]
    return out, arg.astype(np.int64)


def max_pool_backward(grad, arg, steps):
    b, f = grad.shape
    out = np.zeros((b, steps, f), dtype=np.float64)
    np.put_along_axis(out, arg[:, None, :], grad[:, None, :], axis=1)
    return out


def scatter_add_rows(src, index, num_rows):
    """``out[index[i]] += src[i]``; rows of ``out`` never indexed stay zero."""
    out = np.zeros((num_rows, src.shape[1]), dtype=np.float64)
    np.add.at(out, index, src)
    return out
