"""Shared oracles for the test suite."""

import numpy as np

FD_STEP = 1e-5
# Denominator floor for relative error, so coordinates whose true gradient is
# zero are judged by absolute error instead.
REL_FLOOR = 1e-6


def central_difference(f, values, step=FD_STEP):
    values = np.array(values, dtype=float)
    out = np.zeros_like(values)
    for i in range(values.size):
        up, down = values.copy(), values.copy()
        up[i] += step
        down[i] -= step
        out[i] = (f(up) - f(down)) / (2 * step)
    return out


def max_relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def brute_force_eer(genuine, impostor):
    """Literal threshold sweep: every distinct score and +inf, lowest threshold wins ties."""
    thresholds = sorted(set(genuine) | set(impostor)) + [float("inf")]
    best = None
    for th in thresholds:
        far = sum(s >= th for s in impostor) / len(impostor)
        frr = sum(s < th for s in genuine) / len(genuine)
        gap = abs(far - frr)
        if best is None or gap < best[0]:
            best = (gap, (far + frr) / 2, th)
    return best[1], best[2]
