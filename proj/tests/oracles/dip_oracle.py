"""Independent oracle for Hartigan's dip.

Computes the dip straight from its definition: the smallest sup-distance between the
empirical CDF and any unimodal CDF. For each candidate mode index m the best fit is a
linear program over the fitted CDF values g_1..g_n at the sorted sample points:

    minimize eps
    k/n - eps <= g_k <= (k-1)/n + eps        (band around both ECDF limits at x_k)
    slopes nonnegative, nondecreasing up to x_m, nonincreasing after x_m
    0 <= g_1, g_n <= 1

The dip is the minimum over m. Writes tests/data/dip_oracle.csv (n, dip, values...).
Run from the repository root: python3 tests/oracles/dip_oracle.py
"""

import csv
import sys

import numpy as np
from scipy.optimize import linprog


def dip_lp(sample):
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    best = np.inf
    nvar = n + 1  # g_1..g_n, eps
    for m in range(n):
        a_ub, b_ub = [], []
        for k in range(n):
            row = np.zeros(nvar)
            row[k] = -1.0
            row[n] = -1.0
            a_ub.append(row)
            b_ub.append(-(k + 1) / n)  # g_k >= (k+1)/n - eps
            row = np.zeros(nvar)
            row[k] = 1.0
            row[n] = -1.0
            a_ub.append(row)
            b_ub.append(k / n)  # g_k <= k/n + eps
        def slope(k):
            row = np.zeros(nvar)
            dx = x[k + 1] - x[k]
            row[k + 1] = 1.0 / dx
            row[k] = -1.0 / dx
            return row
        for k in range(n - 1):
            a_ub.append(-slope(k))
            b_ub.append(0.0)
        for k in range(n - 2):
            # segment k joins points k, k+1; the mode sits at point m
            if k + 1 < m:
                a_ub.append(slope(k) - slope(k + 1))  # convex
            else:
                a_ub.append(slope(k + 1) - slope(k))  # concave
            b_ub.append(0.0)
        bounds = [(0.0, 1.0)] * n + [(0.0, None)]
        c = np.zeros(nvar)
        c[n] = 1.0
        res = linprog(c, A_ub=np.array(a_ub), b_ub=np.array(b_ub), bounds=bounds, method="highs")
        if res.status == 0:
            best = min(best, res.fun)
    return best


def main():
    rng = np.random.default_rng(20240611)
    rows = []
    for i in range(120):
        n = int(rng.integers(4, 26))
        kind = i % 4
        if kind == 0:
            s = rng.uniform(size=n)
        elif kind == 1:
            s = rng.normal(size=n)
        elif kind == 2:
            s = np.concatenate([rng.normal(0, 1, n // 2), rng.normal(5, 1, n - n // 2)])
        else:
            s = rng.exponential(size=n)
        s = np.round(s, 6)
        if len(np.unique(s)) != n:
            continue
        rows.append((n, dip_lp(s), s))
    check = "--check" in sys.argv
    if check:
        import diptest
        worst = max(abs(d - diptest.dipstat(s)) for _, d, s in rows)
        print(f"max |lp - diptest| = {worst:.3e} over {len(rows)} samples")
    with open("tests/data/dip_oracle.csv", "w", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["n", "dip", "values"])
        for n, d, s in rows:
            w.writerow([n, repr(float(d))] + [repr(float(v)) for v in s])


if __name__ == "__main__":
    main()
