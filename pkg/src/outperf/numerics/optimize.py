import math

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def minimize_convex_1d(f, lo, hi, tol=1e-10, max_iter=500):
    """Golden-section search for a unimodal ``f`` on ``[lo, hi]``.

    Both endpoints are compared against the interior result, so boundary
    minima are returned exactly. Returns ``(argmin, min)``.
    """
    lo = float(lo)
    hi = float(hi)
    if not lo < hi:
        raise ValueError(f"minimize_convex_1d needs lo < hi, got [{lo}, {hi}]")
    if not tol > 0:
        raise ValueError("tol must be positive")

    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    best = min(((fc, c), (fd, d), (f(lo), lo), (f(hi), hi)), key=lambda p: p[0])
    return best[1], best[0]
