"""Central finite-difference checks for tape gradients."""

import numpy as np

from lastraj.nn.autodiff import Tape


def tape_grads(build, tensors):
    with Tape() as tape:
        loss = build()
    return loss, tape.backward(loss, tensors)


def rel_error_report(build, tensors, eps=1e-5, max_entries=40, rng=None):
    """(largest relative error, number of probes skipped as kinks).

    At most ``max_entries`` randomly chosen entries per tensor are probed. A
    probe whose one-sided slopes differ by at least the discrepancy sits on a
    kink (e.g. a rectifier input within ``eps`` of zero): the derivative is
    undefined there, so it is counted instead of compared.
    """
    rng = rng or np.random.default_rng(0)
    _, grads = tape_grads(build, tensors)
    base = float(build().value)
    worst, kinks = 0.0, 0
    for t in tensors:
        g = grads[id(t)]
        flat = t.value.reshape(-1)
        picks = np.arange(flat.size)
        if flat.size > max_entries:
            picks = rng.choice(flat.size, size=max_entries, replace=False)
        for k in picks:
            old = flat[k]
            flat[k] = old + eps
            up = float(build().value)
            flat[k] = old - eps
            down = float(build().value)
            flat[k] = old
            fd = (up - down) / (2 * eps)
            an = g.reshape(-1)[k]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            if err > 1e-4 and abs((up - base) - (base - down)) / eps >= abs(fd - an):
                kinks += 1
                continue
            worst = max(worst, err)
    return worst, kinks


def max_rel_error(build, tensors, eps=1e-5, max_entries=40, rng=None):
    """Largest relative error between tape and finite-difference gradients."""
    return rel_error_report(build, tensors, eps, max_entries, rng)[0]
