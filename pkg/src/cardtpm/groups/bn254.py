"""Low-level arithmetic for a 254-bit Barreto-Naehrig curve (the widely
deployed alt_bn128 parameter set) with an optimal-ate pairing.

Layout conventions used throughout:

* Fp elements are gmpy2 ``mpz`` integers in [0, P).
* Fp2 elements are pairs ``(c0, c1)`` meaning ``c0 + c1*i`` with ``i^2 = -1``.
* Fp6 elements are triples of Fp2, coefficients of ``1, v, v^2`` with
  ``v^3 = XI`` and ``XI = 9 + i``.
* Fp12 elements are pairs of Fp6, coefficients of ``1, w`` with ``w^2 = v``.
* G1 points are Jacobian triples of Fp, or ``None`` for the identity.
* G2 points are Jacobian triples of Fp2 on the D-twist y^2 = x^3 + 3/XI,
  or ``None`` for the identity.

Everything here is tuples and module functions; the object layer lives in
``cardtpm.groups``.
"""

import gmpy2
from gmpy2 import mpz

# BN parameter u; P and R are the standard polynomial evaluations.
U = mpz(4965661367192848881)
P = 36 * U**4 + 36 * U**3 + 24 * U**2 + 6 * U + 1
R = 36 * U**4 + 36 * U**3 + 18 * U**2 + 6 * U + 1

CURVE_B = mpz(3)

G1_GEN = (mpz(1), mpz(2), mpz(1))

# Generator of the order-R subgroup of the twist (x, y in Fp2, (c0, c1) order).
G2_GEN = (
    (mpz(10857046999023057135944570762232829481370756359578518086990519993285655852781),
     mpz(11559732032986387107991004021392285783925812861821192530917403151452391805634)),
    (mpz(8495653923123431417604973247489272438418190587263600148770280649306958101930),
     mpz(4082367875863433681332203403145435568316851327593401208105741076214120093531)),
    (mpz(1), mpz(0)),
)

ZERO = mpz(0)
ONE = mpz(1)


# ---------------------------------------------------------------------------
# Fp2

FP2_ZERO = (ZERO, ZERO)
FP2_ONE = (ONE, ZERO)
XI = (mpz(9), ONE)


def fp2_add(a, b):
    return ((a[0] + b[0]) % P, (a[1] + b[1]) % P)


def fp2_sub(a, b):
    return ((a[0] - b[0]) % P, (a[1] - b[1]) % P)


def fp2_neg(a):
    return ((-a[0]) % P, (-a[1]) % P)


def fp2_conj(a):
    return (a[0], (-a[1]) % P)


def fp2_mul(a, b):
    # Karatsuba, 3 base multiplications.
    t0 = a[0] * b[0]
    t1 = a[1] * b[1]
    t2 = (a[0] + a[1]) * (b[0] + b[1])
    return ((t0 - t1) % P, (t2 - t0 - t1) % P)


def fp2_sqr(a):
    t0 = (a[0] + a[1]) * (a[0] - a[1])
    t1 = 2 * a[0] * a[1]
    return (t0 % P, t1 % P)


def fp2_mul_fp(a, k):
    return ((a[0] * k) % P, (a[1] * k) % P)


def fp2_mul_xi(a):
    # (9 + i) * (c0 + c1 i)
    return ((9 * a[0] - a[1]) % P, (9 * a[1] + a[0]) % P)


def fp2_inv(a):
    t = gmpy2.invert(a[0] * a[0] + a[1] * a[1], P)
    return ((a[0] * t) % P, (-a[1] * t) % P)


def fp2_pow(a, e):
    result = FP2_ONE
    base = a
    e = int(e)
    while e:
        if e & 1:
            result = fp2_mul(result, base)
        base = fp2_sqr(base)
        e >>= 1
    return result


TWIST_B = fp2_mul(XI and fp2_inv(XI), (CURVE_B, ZERO))  # 3 / (9 + i)


# ---------------------------------------------------------------------------
# Fp6

FP6_ZERO = (FP2_ZERO, FP2_ZERO, FP2_ZERO)
FP6_ONE = (FP2_ONE, FP2_ZERO, FP2_ZERO)


def fp6_add(a, b):
    return (fp2_add(a[0], b[0]), fp2_add(a[1], b[1]), fp2_add(a[2], b[2]))


def fp6_sub(a, b):
    return (fp2_sub(a[0], b[0]), fp2_sub(a[1], b[1]), fp2_sub(a[2], b[2]))


def fp6_neg(a):
    return (fp2_neg(a[0]), fp2_neg(a[1]), fp2_neg(a[2]))


def fp6_mul(a, b):
    v0 = fp2_mul(a[0], b[0])
    v1 = fp2_mul(a[1], b[1])
    v2 = fp2_mul(a[2], b[2])
    c0 = fp2_add(v0, fp2_mul_xi(fp2_sub(fp2_mul(fp2_add(a[1], a[2]), fp2_add(b[1], b[2])), fp2_add(v1, v2))))
    c1 = fp2_add(fp2_sub(fp2_mul(fp2_add(a[0], a[1]), fp2_add(b[0], b[1])), fp2_add(v0, v1)), fp2_mul_xi(v2))
    c2 = fp2_add(fp2_sub(fp2_mul(fp2_add(a[0], a[2]), fp2_add(b[0], b[2])), fp2_add(v0, v2)), v1)
    return (c0, c1, c2)


def fp6_sqr(a):
    return fp6_mul(a, a)


def fp6_mul_fp2(a, k):
    return (fp2_mul(a[0], k), fp2_mul(a[1], k), fp2_mul(a[2], k))


def fp6_mul_v(a):
    # multiply by v: (c0, c1, c2) -> (XI*c2, c0, c1)
    return (fp2_mul_xi(a[2]), a[0], a[1])


def fp6_inv(a):
    c0 = fp2_sub(fp2_sqr(a[0]), fp2_mul_xi(fp2_mul(a[1], a[2])))
    c1 = fp2_sub(fp2_mul_xi(fp2_sqr(a[2])), fp2_mul(a[0], a[1]))
    c2 = fp2_sub(fp2_sqr(a[1]), fp2_mul(a[0], a[2]))
    t = fp2_add(fp2_mul(a[0], c0), fp2_mul_xi(fp2_add(fp2_mul(a[2], c1), fp2_mul(a[1], c2))))
    t = fp2_inv(t)
    return (fp2_mul(c0, t), fp2_mul(c1, t), fp2_mul(c2, t))


# ---------------------------------------------------------------------------
# Fp12

FP12_ONE = (FP6_ONE, FP6_ZERO)


def fp12_mul(a, b):
    t0 = fp6_mul(a[0], b[0])
    t1 = fp6_mul(a[1], b[1])
    c1 = fp6_sub(fp6_mul(fp6_add(a[0], a[1]), fp6_add(b[0], b[1])), fp6_add(t0, t1))
    c0 = fp6_add(t0, fp6_mul_v(t1))
    return (c0, c1)


def fp12_sqr(a):
    t0 = fp6_mul(a[0], a[1])
    c0 = fp6_sub(fp6_sub(fp6_mul(fp6_add(a[0], a[1]), fp6_add(a[0], fp6_mul_v(a[1]))), t0), fp6_mul_v(t0))
    return (c0, fp6_add(t0, t0))


def fp12_conj(a):
    return (a[0], fp6_neg(a[1]))


def fp12_inv(a):
    t = fp6_inv(fp6_sub(fp6_sqr(a[0]), fp6_mul_v(fp6_sqr(a[1]))))
    return (fp6_mul(a[0], t), fp6_neg(fp6_mul(a[1], t)))


def fp12_pow(a, e):
    e = int(e)
    if e < 0:
        return fp12_pow(fp12_inv(a), -e)
    result = FP12_ONE
    base = a
    while e:
        if e & 1:
            result = fp12_mul(result, base)
        base = fp12_sqr(base)
        e >>= 1
    return result


# Frobenius coefficients: FROB1[k] = XI^(k*(P-1)/6), FROB2[k] = XI^(k*(P^2-1)/6).
FROB1 = [fp2_pow(XI, k * (P - 1) // 6) for k in range(6)]
FROB2 = [fp2_pow(XI, k * (P * P - 1) // 6) for k in range(6)]
assert all(c[1] == 0 for c in FROB2), "p^2-Frobenius coefficients must lie in Fp"
assert FROB2[3] == ((P - 1) % P, 0), "xi^((p^2-1)/2) must equal -1"


def fp12_frobenius(a):
    (a0, a1, a2), (b0, b1, b2) = a
    return (
        (fp2_conj(a0), fp2_mul(fp2_conj(a1), FROB1[2]), fp2_mul(fp2_conj(a2), FROB1[4])),
        (fp2_mul(fp2_conj(b0), FROB1[1]), fp2_mul(fp2_conj(b1), FROB1[3]), fp2_mul(fp2_conj(b2), FROB1[5])),
    )


def fp12_frobenius_p2(a):
    (a0, a1, a2), (b0, b1, b2) = a
    return (
        (a0, fp2_mul_fp(a1, FROB2[2][0]), fp2_mul_fp(a2, FROB2[4][0])),
        (fp2_mul_fp(b0, FROB2[1][0]), fp2_mul_fp(b1, FROB2[3][0]), fp2_mul_fp(b2, FROB2[5][0])),
    )


# ---------------------------------------------------------------------------
# G1 (Jacobian over Fp); None is the point at infinity.


def g1_is_on_curve(pt):
    if pt is None:
        return True
    x, y = g1_to_affine(pt)
    return (y * y - (x * x * x + CURVE_B)) % P == 0


def g1_double(pt):
    if pt is None:
        return None
    x, y, z = pt
    a = (x * x) % P
    b = (y * y) % P
    c = (b * b) % P
    d = (2 * ((x + b) ** 2 - a - c)) % P
    e = (3 * a) % P
    f = (e * e) % P
    x3 = (f - 2 * d) % P
    y3 = (e * (d - x3) - 8 * c) % P
    z3 = (2 * y * z) % P
    if z3 == 0:
        return None
    return (x3, y3, z3)


def g1_add(p1, p2):
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    x1, y1, z1 = p1
    x2, y2, z2 = p2
    z1z1 = (z1 * z1) % P
    z2z2 = (z2 * z2) % P
    u1 = (x1 * z2z2) % P
    u2 = (x2 * z1z1) % P
    s1 = (y1 * z2 * z2z2) % P
    s2 = (y2 * z1 * z1z1) % P
    if u1 == u2:
        if s1 != s2:
            return None
        return g1_double(p1)
    h = (u2 - u1) % P
    i = (4 * h * h) % P
    j = (h * i) % P
    rr = (2 * (s2 - s1)) % P
    v = (u1 * i) % P
    x3 = (rr * rr - j - 2 * v) % P
    y3 = (rr * (v - x3) - 2 * s1 * j) % P
    z3 = (2 * h * z1 * z2) % P
    if z3 == 0:
        return None
    return (x3, y3, z3)


def g1_neg(pt):
    if pt is None:
        return None
    x, y, z = pt
    return (x, (-y) % P, z)


def g1_mul(pt, k):
    # No reduction mod R here: correctness of subgroup checks relies on the
    # unreduced scalar (points off the prime-order subgroup have other orders).
    k = int(k)
    if k < 0:
        pt = g1_neg(pt)
        k = -k
    if k == 0 or pt is None:
        return None
    result = None
    for bit in bin(k)[2:]:
        result = g1_double(result)
        if bit == "1":
            result = g1_add(result, pt)
    return result


def g1_to_affine(pt):
    x, y, z = pt
    zi = gmpy2.invert(z, P)
    zi2 = (zi * zi) % P
    return ((x * zi2) % P, (y * zi2 * zi) % P)


def g1_eq(p1, p2):
    if p1 is None or p2 is None:
        return p1 is p2 or (p1 is None and p2 is None)
    return g1_to_affine(p1) == g1_to_affine(p2)


# ---------------------------------------------------------------------------
# G2 (Jacobian over Fp2 on the twist); None is the identity.


def g2_is_on_twist(pt):
    if pt is None:
        return True
    x, y = g2_to_affine(pt)
    lhs = fp2_sqr(y)
    rhs = fp2_add(fp2_mul(fp2_sqr(x), x), TWIST_B)
    return lhs == rhs


def g2_double(pt):
    if pt is None:
        return None
    x, y, z = pt
    a = fp2_sqr(x)
    b = fp2_sqr(y)
    c = fp2_sqr(b)
    d = fp2_sub(fp2_sqr(fp2_add(x, b)), fp2_add(a, c))
    d = fp2_add(d, d)
    e = fp2_add(fp2_add(a, a), a)
    f = fp2_sqr(e)
    x3 = fp2_sub(f, fp2_add(d, d))
    c8 = fp2_add(c, c)
    c8 = fp2_add(c8, c8)
    c8 = fp2_add(c8, c8)
    y3 = fp2_sub(fp2_mul(e, fp2_sub(d, x3)), c8)
    z3 = fp2_mul(fp2_add(y, y), z)
    if z3 == FP2_ZERO:
        return None
    return (x3, y3, z3)


def g2_add(p1, p2):
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    x1, y1, z1 = p1
    x2, y2, z2 = p2
    z1z1 = fp2_sqr(z1)
    z2z2 = fp2_sqr(z2)
    u1 = fp2_mul(x1, z2z2)
    u2 = fp2_mul(x2, z1z1)
    s1 = fp2_mul(fp2_mul(y1, z2), z2z2)
    s2 = fp2_mul(fp2_mul(y2, z1), z1z1)
    if u1 == u2:
        if s1 != s2:
            return None
        return g2_double(p1)
    h = fp2_sub(u2, u1)
    i = fp2_sqr(fp2_add(h, h))
    j = fp2_mul(h, i)
    rr = fp2_sub(s2, s1)
    rr = fp2_add(rr, rr)
    v = fp2_mul(u1, i)
    x3 = fp2_sub(fp2_sub(fp2_sqr(rr), j), fp2_add(v, v))
    t = fp2_mul(s1, j)
    y3 = fp2_sub(fp2_mul(rr, fp2_sub(v, x3)), fp2_add(t, t))
    z3 = fp2_mul(fp2_mul(fp2_add(h, h), z1), z2)
    if z3 == FP2_ZERO:
        return None
    return (x3, y3, z3)


def g2_neg(pt):
    if pt is None:
        return None
    x, y, z = pt
    return (x, fp2_neg(y), z)


def g2_mul(pt, k):
    k = int(k)
    if k < 0:
        pt = g2_neg(pt)
        k = -k
    if k == 0 or pt is None:
        return None
    result = None
    for bit in bin(k)[2:]:
        result = g2_double(result)
        if bit == "1":
            result = g2_add(result, pt)
    return result


def g2_to_affine(pt):
    x, y, z = pt
    zi = fp2_inv(z)
    zi2 = fp2_sqr(zi)
    return (fp2_mul(x, zi2), fp2_mul(fp2_mul(y, zi2), zi))


def g2_eq(p1, p2):
    if p1 is None or p2 is None:
        return p1 is None and p2 is None
    return g2_to_affine(p1) == g2_to_affine(p2)


def g2_in_subgroup(pt):
    return g2_is_on_twist(pt) and g2_mul(pt, R) is None


# ---------------------------------------------------------------------------
# Optimal ate pairing.
#
# Line-function formulas follow the Jacobian-coordinate tangent/chord
# construction used by the dclxvi family of BN implementations: each step
# yields Fp2 coefficients (a, b, c) with the G1 evaluation folded in as
# b = b_pre * P.x and c = c_pre * P.y, and the line value is absorbed into
# the Fp12 accumulator as c + b*w + a*v*w.


def _naf(k):
    k = int(k)
    out = []
    while k:
        if k & 1:
            d = 2 - (k & 3)
            k -= d
        else:
            d = 0
        out.append(d)
        k >>= 1
    return out


# Digits of 6u+2, most significant first, leading digit dropped.
ATE_NAF = list(reversed(_naf(6 * U + 2)))[1:]


def _line_double(t):
    """Tangent line at t; returns (a, b_pre, c_pre, 2t)."""
    x, y, z = t
    r_t = fp2_sqr(z)
    a_ = fp2_sqr(x)
    b_ = fp2_sqr(y)
    c_ = fp2_sqr(b_)
    d_ = fp2_sub(fp2_sqr(fp2_add(x, b_)), fp2_add(a_, c_))
    d_ = fp2_add(d_, d_)
    e_ = fp2_add(fp2_add(a_, a_), a_)
    f_ = fp2_sqr(e_)
    c8 = fp2_add(c_, c_)
    c8 = fp2_add(c8, c8)
    c8 = fp2_add(c8, c8)
    rx = fp2_sub(f_, fp2_add(d_, d_))
    ry = fp2_sub(fp2_mul(e_, fp2_sub(d_, rx)), c8)
    rz = fp2_sub(fp2_sqr(fp2_add(y, z)), fp2_add(b_, r_t))
    t_out = (rx, ry, rz)

    b4 = fp2_add(b_, b_)
    b4 = fp2_add(b4, b4)
    a = fp2_sub(fp2_sqr(fp2_add(x, e_)), fp2_add(fp2_add(a_, f_), b4))
    et = fp2_mul(e_, r_t)
    b_pre = fp2_neg(fp2_add(et, et))
    czz = fp2_mul(rz, r_t)
    c_pre = fp2_add(czz, czz)
    return a, b_pre, c_pre, t_out


def _line_add(t, q, q_y2):
    """Chord line through t and q (q affine, z=1); returns (a, b_pre, c_pre, t+q)."""
    qx, qy = q
    x, y, z = t
    r_t = fp2_sqr(z)
    b_ = fp2_mul(qx, r_t)
    d_ = fp2_sub(fp2_sub(fp2_sqr(fp2_add(qy, z)), q_y2), r_t)
    d_ = fp2_mul(d_, r_t)
    h = fp2_sub(b_, x)
    i = fp2_sqr(h)
    e_ = fp2_add(i, i)
    e_ = fp2_add(e_, e_)
    j = fp2_mul(h, e_)
    l1 = fp2_sub(fp2_sub(d_, y), y)
    v = fp2_mul(x, e_)
    rx = fp2_sub(fp2_sub(fp2_sqr(l1), j), fp2_add(v, v))
    rz = fp2_sub(fp2_sub(fp2_sqr(fp2_add(z, h)), r_t), i)
    t2 = fp2_mul(y, j)
    ry = fp2_sub(fp2_mul(fp2_sub(v, rx), l1), fp2_add(t2, t2))
    t_out = (rx, ry, rz)

    t_ = fp2_sub(fp2_sub(fp2_sqr(fp2_add(qy, rz)), q_y2), fp2_sqr(rz))
    t3 = fp2_mul(l1, qx)
    t3 = fp2_add(t3, t3)
    a = fp2_sub(t3, t_)
    c_pre = fp2_add(rz, rz)
    nl = fp2_neg(l1)
    b_pre = fp2_add(nl, nl)
    return a, b_pre, c_pre, t_out


def prepare_g2(q):
    """Precompute all Miller-loop line coefficients for a fixed G2 point."""
    if q is None:
        return None
    qa = g2_to_affine(q)
    q_neg = (qa[0], fp2_neg(qa[1]))
    q_y2 = fp2_sqr(qa[1])
    coeffs = []
    t = (qa[0], qa[1], FP2_ONE)
    for digit in ATE_NAF:
        a, b_pre, c_pre, t = _line_double(t)
        coeffs.append((a, b_pre, c_pre))
        if digit == 1:
            a, b_pre, c_pre, t = _line_add(t, qa, q_y2)
            coeffs.append((a, b_pre, c_pre))
        elif digit == -1:
            a, b_pre, c_pre, t = _line_add(t, q_neg, q_y2)
            coeffs.append((a, b_pre, c_pre))
    # Frobenius correction points: q1 = pi(Q); q2 carries y unnegated, which
    # together with xi^((p^2-1)/2) = -1 equals -pi^2(Q).
    q1 = (fp2_mul(fp2_conj(qa[0]), FROB1[2]), fp2_mul(fp2_conj(qa[1]), FROB1[3]))
    q2 = (fp2_mul_fp(qa[0], FROB2[2][0]), qa[1])
    a, b_pre, c_pre, t = _line_add(t, q1, fp2_sqr(q1[1]))
    coeffs.append((a, b_pre, c_pre))
    a, b_pre, c_pre, t = _line_add(t, q2, fp2_sqr(q2[1]))
    coeffs.append((a, b_pre, c_pre))
    return coeffs


def _mul_line(f, a, b, c):
    """f *= (c + b*w + a*v*w) with a, b, c in Fp2."""
    f0, f1 = f
    l1 = (b, a, FP2_ZERO)
    t1 = fp6_mul(f1, l1)
    t3 = fp6_mul_fp2(f0, c)
    l2 = (fp2_add(b, c), a, FP2_ZERO)
    c1 = fp6_sub(fp6_sub(fp6_mul(fp6_add(f0, f1), l2), t1), t3)
    c0 = fp6_add(t3, fp6_mul_v(t1))
    return (c0, c1)


def miller_loop(coeffs, p):
    """Evaluate the Miller loop for precomputed G2 coefficients at G1 point p."""
    px, py = g1_to_affine(p)
    f = FP12_ONE
    idx = 0
    for digit in ATE_NAF:
        f = fp12_sqr(f)
        a, b_pre, c_pre = coeffs[idx]
        idx += 1
        f = _mul_line(f, a, fp2_mul_fp(b_pre, px), fp2_mul_fp(c_pre, py))
        if digit:
            a, b_pre, c_pre = coeffs[idx]
            idx += 1
            f = _mul_line(f, a, fp2_mul_fp(b_pre, px), fp2_mul_fp(c_pre, py))
    a, b_pre, c_pre = coeffs[idx]
    f = _mul_line(f, a, fp2_mul_fp(b_pre, px), fp2_mul_fp(c_pre, py))
    a, b_pre, c_pre = coeffs[idx + 1]
    f = _mul_line(f, a, fp2_mul_fp(b_pre, px), fp2_mul_fp(c_pre, py))
    return f


def final_exponentiation(f):
    """Map a Miller-loop value to the order-R subgroup: f^((p^12-1)/r)."""
    # Easy part: f^((p^6-1)(p^2+1)).
    t1 = fp12_mul(fp12_conj(f), fp12_inv(f))
    t1 = fp12_mul(fp12_frobenius_p2(t1), t1)
    # Hard part, expressed through powers of the curve parameter u.
    fp1 = fp12_frobenius(t1)
    fp2_ = fp12_frobenius_p2(t1)
    fp3 = fp12_frobenius(fp2_)
    fu1 = fp12_pow(t1, U)
    fu2 = fp12_pow(fu1, U)
    fu3 = fp12_pow(fu2, U)
    y3 = fp12_conj(fp12_frobenius(fu1))
    fu2p = fp12_frobenius(fu2)
    fu3p = fp12_frobenius(fu3)
    y2 = fp12_frobenius_p2(fu2)
    y0 = fp12_mul(fp12_mul(fp1, fp2_), fp3)
    y1 = fp12_conj(t1)
    y5 = fp12_conj(fu2)
    y4 = fp12_conj(fp12_mul(fu1, fu2p))
    y6 = fp12_conj(fp12_mul(fu3, fu3p))
    t0 = fp12_mul(fp12_mul(fp12_sqr(y6), y4), y5)
    t1_ = fp12_mul(fp12_mul(y3, y5), t0)
    t0 = fp12_mul(t0, y2)
    t1_ = fp12_mul(fp12_sqr(t1_), t0)
    t1_ = fp12_sqr(t1_)
    t0 = fp12_mul(t1_, y1)
    t1_ = fp12_mul(t1_, y0)
    t0 = fp12_sqr(t0)
    return fp12_mul(t0, t1_)


def pairing(p, q):
    """Optimal ate pairing e(p, q) -> Fp12 element of order dividing R."""
    if p is None or q is None:
        return FP12_ONE
    return final_exponentiation(miller_loop(prepare_g2(q), p))


def multi_miller(pairs):
    """Product of Miller loops for [(p, prepared_q), ...], one final exp."""
    f = FP12_ONE
    for p, coeffs in pairs:
        if p is None or coeffs is None:
            continue
        f = fp12_mul(f, miller_loop(coeffs, p))
    return final_exponentiation(f)


# ---------------------------------------------------------------------------
# Square roots and hashing to G1.

assert P % 4 == 3


def fp_sqrt(a):
    a = a % P
    r = gmpy2.powmod(a, (P + 1) // 4, P)
    if (r * r) % P != a:
        return None
    return r


def fp2_sqrt(a):
    if a == FP2_ZERO:
        return FP2_ZERO
    a0, a1 = a
    if a1 == 0:
        r = fp_sqrt(a0)
        if r is not None:
            return (r, ZERO)
        r = fp_sqrt((-a0) % P)
        if r is None:
            return None
        return (ZERO, r)
    n = (a0 * a0 + a1 * a1) % P
    s = fp_sqrt(n)
    if s is None:
        return None
    inv2 = gmpy2.invert(2, P)
    t = ((a0 + s) * inv2) % P
    x0 = fp_sqrt(t)
    if x0 is None:
        t = ((a0 - s) * inv2) % P
        x0 = fp_sqrt(t)
        if x0 is None:
            return None
    x1 = (a1 * gmpy2.invert(2 * x0, P)) % P
    cand = (x0, x1)
    if fp2_sqr(cand) != a:
        return None
    return cand


def g1_from_x(x, parity):
    """Lift x to a curve point with the requested y parity; None if off-curve."""
    x = mpz(x) % P
    y = fp_sqrt((x * x * x + CURVE_B) % P)
    if y is None:
        return None
    if int(y) & 1 != parity:
        y = (-y) % P
    return (x, y, ONE)


# Import-time sanity: generators are on their curves and have order R.
assert g1_is_on_curve(G1_GEN)
assert g2_is_on_twist(G2_GEN)
assert g1_mul(G1_GEN, R) is None
assert g2_mul(G2_GEN, R) is None
