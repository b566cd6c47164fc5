"""Orientation and in-circle tests with exact fallback.

A floating-point evaluation is trusted when it clears a forward error bound;
otherwise the determinant is recomputed with ``fractions.Fraction``, which is
exact for float inputs.
"""
from fractions import Fraction

_EPS = 2.0 ** -53
_CCW_BOUND = (3.0 + 16.0 * _EPS) * _EPS
_ICC_BOUND = (10.0 + 96.0 * _EPS) * _EPS


def orient2d(a, b, c):
    """Sign of twice the signed area of (a, b, c): +1 counter-clockwise."""
    detleft = (a[0] - c[0]) * (b[1] - c[1])
    detright = (a[1] - c[1]) * (b[0] - c[0])
    det = detleft - detright
    bound = _CCW_BOUND * (abs(detleft) + abs(detright))
    if det > bound:
        return 1
    if -det > bound:
        return -1
    ax, ay = Fraction(a[0]), Fraction(a[1])
    bx, by = Fraction(b[0]), Fraction(b[1])
    cx, cy = Fraction(c[0]), Fraction(c[1])
    d = (ax - cx) * (by - cy) - (ay - cy) * (bx - cx)
    return (d > 0) - (d < 0)


def incircle(a, b, c, d):
    """Positive if d lies inside the circle through counter-clockwise a, b, c."""
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    bc = bdx * cdy - bdy * cdx
    ca = cdx * ady - cdy * adx
    ab = adx * bdy - ady * bdx
    det = alift * bc + blift * ca + clift * ab
    perm = ((abs(bdx * cdy) + abs(bdy * cdx)) * alift
            + (abs(cdx * ady) + abs(cdy * adx)) * blift
            + (abs(adx * bdy) + abs(ady * bdx)) * clift)
    bound = _ICC_BOUND * perm
    if det > bound:
        return 1
    if -det > bound:
        return -1
    F = Fraction
    adx, ady = F(a[0]) - F(d[0]), F(a[1]) - F(d[1])
    bdx, bdy = F(b[0]) - F(d[0]), F(b[1]) - F(d[1])
    cdx, cdy = F(c[0]) - F(d[0]), F(c[1]) - F(d[1])
    e = ((adx * adx + ady * ady) * (bdx * cdy - bdy * cdx)
         + (bdx * bdx + bdy * bdy) * (cdx * ady - cdy * adx)
         + (cdx * cdx + cdy * cdy) * (adx * bdy - ady * bdx))
    return (e > 0) - (e < 0)
