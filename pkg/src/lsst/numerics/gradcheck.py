"""Central finite-difference verification of tape gradients."""

import numpy as np

from .engine import Tape, Tensor, gradients


def grad_check(f, x, h=1e-5):
    """Compare tape gradients of ``f`` against central differences.

    ``f(x, tape)`` must return a scalar Tensor, recording on ``tape`` when
    one is given and running pure otherwise.  Returns the maximum over
    coordinates of ``|g_tape - g_fd| / max(1, |g_fd|)``.  Double precision
    input is assumed; h=1e-5 balances truncation against rounding there.
    """
    tape = Tape()
    loss = f(x, tape)
    g_tape = gradients(tape, loss, [x])[0]

    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor._wrap(x.data), None).data)
        flat[i] = orig - h
        fm = float(f(Tensor._wrap(x.data), None).data)
        flat[i] = orig
        g_fd = (fp - fm) / (2.0 * h)
        err = abs(g_tape.reshape(-1)[i] - g_fd) / max(1.0, abs(g_fd))
        if err > worst:
            worst = err
    return worst


def grad_check_sampled(f, x, coords, h=1e-5, seed=0):
    """grad_check restricted to ``coords`` randomly chosen coordinates.

    Used for whole-model checks where sweeping every coordinate would be
    wasteful; sampling is deterministic by seed.
    """
    tape = Tape()
    loss = f(x, tape)
    g_tape = gradients(tape, loss, [x])[0].reshape(-1)

    rng = np.random.default_rng(seed)
    n = x.data.size
    idx = rng.permutation(n)[:min(coords, n)]
    flat = x.data.reshape(-1)
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor._wrap(x.data), None).data)
        flat[i] = orig - h
        fm = float(f(Tensor._wrap(x.data), None).data)
        flat[i] = orig
        g_fd = (fp - fm) / (2.0 * h)
        err = abs(g_tape[i] - g_fd) / max(1.0, abs(g_fd))
        if err > worst:
            worst = err
    return worst
