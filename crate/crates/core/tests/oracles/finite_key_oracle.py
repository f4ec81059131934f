"""High-precision reference values for the finite-key tests.

Evaluates the closed-form entropy, xi and P_theta expressions with mpmath at
40 significant digits, locates theta roots by a dense grid scan followed by
interval halving on the grid bracket, and prints the frozen constants used in
tests/finite_key.rs and tests/bias_optimizer.rs.
"""
from mpmath import mp, mpf, log, sqrt

mp.dps = 40


def H(x):
    x = mpf(x)
    if x == 0 or x == 1:
        return mpf(0)
    return -x * log(x, 2) - (1 - x) * log(1 - x, 2)


def xi(e, q, t):
    e, q, t = mpf(e), mpf(q), mpf(t)
    return H(e + t - q * t) - q * H(e) - (1 - q) * H(e + t)


def p_theta(nx, nz, e, q, t):
    n = nx + nz
    e = mpf(e)
    pre = sqrt(n) / sqrt(mpf(nx) * nz * e * (1 - e))
    return min(mpf(1), pre * mpf(2) ** (-n * xi(e, q, t)))


def root(nx, nz, e, q, eps):
    if p_theta(nx, nz, e, q, 0) <= eps:
        return mpf(0)
    # grid scan for the first grid point meeting the target
    step = mpf("1e-4")
    t = mpf(0)
    while p_theta(nx, nz, e, q, t) > eps:
        t += step
        if e + t >= mpf("0.5"):
            return mpf("0.5") - e
    lo, hi = t - step, t
    while hi - lo > mpf("1e-12"):
        m = (lo + hi) / 2
        if p_theta(nx, nz, e, q, m) > eps:
            lo = m
        else:
            hi = m
    return hi


def key(nx, nz, ebx, ebz, fx, fz, eps, asymptotic=False):
    n = nx + nz
    if asymptotic:
        tx = tz = mpf(0)
    else:
        tx = root(nx, nz, ebx, mpf(nx) / n, eps)
        tz = root(nx, nz, ebz, mpf(nz) / n, eps)
    kec = nx * fx * H(ebx) + nz * fz * H(ebz)
    kpr = nx * H(min(ebz + tz, mpf("0.5"))) + nz * H(min(ebx + tx, mpf("0.5")))
    return n - kec - kpr, tx, tz


def model(N, q, asymptotic=False):
    q = mpf(q)
    nx = int(mp.nint(N * (1 - q) ** 2))
    nz = int(mp.nint(N * q * q))
    if nx == 0 or nz == 0:
        return mpf(0)
    return key(nx, nz, mpf("0.069"), mpf("0.065"), mpf("1.1"), mpf("1.12"), mpf("0.003"), asymptotic)[0]


if __name__ == "__main__":
    nx, nz = 1395, 22300
    n = nx + nz
    print("H(0.069)            =", mp.nstr(H("0.069"), 15))
    print("xi x (theta=0.02)   =", mp.nstr(xi("0.069", mpf(nx) / n, "0.02"), 15))
    print("xi z (theta=0.019)  =", mp.nstr(xi("0.065", mpf(nz) / n, "0.019"), 15))
    print("prefactor x         =", mp.nstr(p_theta(nx, nz, "0.069", mpf(nx) / n, 0), 15))
    print("p_theta x (0.02)    =", mp.nstr(p_theta(nx, nz, "0.069", mpf(nx) / n, "0.02"), 15))
    print("p_theta z (0.019)   =", mp.nstr(p_theta(nx, nz, "0.065", mpf(nz) / n, "0.019"), 15))
    k, tx, tz = key(nx, nz, mpf("0.069"), mpf("0.065"), mpf("1.1"), mpf("1.12"), mpf("0.003"))
    print("theta_x             =", mp.nstr(tx, 12))
    print("theta_z             =", mp.nstr(tz, 12))
    print("table-1 key         =", mp.nstr(k, 12))
    ku = key(8661, 8661, mpf("0.069"), mpf("0.065"), mpf("1.1"), mpf("1.12"), mpf("0.003"))[0]
    print("unbiased key        =", mp.nstr(ku, 12), "rate", mp.nstr(ku / 34644, 12))
    k8, k5 = model(34644, "0.8"), model(34644, "0.5")
    print("model key q=0.8     =", mp.nstr(k8, 12), "improvement %", mp.nstr(100 * (k8 / k5 - 1), 12))
    for N in (34644, 10**6):
        base = model(N, "0.5")
        keys = [(model(N, mpf(i) / 1024), i) for i in range(1, 1024)]
        for label, part in (("global", keys), ("q >= 1/2", keys[511:])):
            k, i = max(part)
            print("grid argmax N=%d %-8s =" % (N, label), i, "/1024 key", mp.nstr(k, 12),
                  "improvement %", mp.nstr(100 * (k / base - 1), 12))
    a8, a5 = model(34644, "0.8", True), model(34644, "0.5", True)
    print("asymptotic improvement (table errors) %", mp.nstr(100 * (a8 / a5 - 1), 12))
