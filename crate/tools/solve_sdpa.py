#!/usr/bin/env python3
"""Solve an SDPA sparse file with an external conic solver through CVXPY.

Prints one JSON object: the SDPA objective (min c^T x), the objective of the
original maximization problem when the file carries a peakcert header, the
solver name and its status.

Equality pairs in a peakcert file's LP block are eliminated up front: the
decision vector is parametrized as x = xp + N z over their null space.
"""

import argparse
import json
import re
import sys

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import cvxpy as cp


def read(path):
    header = {}
    body = []
    with open(path) as fh:
        in_header = True
        for line in fh:
            t = line.strip()
            if in_header and t[:1] in ("*", '"'):
                w = t[1:].split()
                if w[:1] == ["objective_constant"]:
                    header["constant"] = float(w[1])
                elif w[:1] == ["psd_blocks"]:
                    header["layout"] = (int(w[1]), int(w[3]), int(w[5]))
                continue
            in_header = False
            t = re.sub(r"[{}(),]", " ", t).strip()
            if t:
                body.append(t)
    m = int(body[0].split()[0])
    nb = int(body[1].split()[0])
    rest = " ".join(body[2:]).split()
    sizes = [int(float(v)) for v in rest[:nb]]
    c = np.array([float(v) for v in rest[nb:nb + m]])
    ent = np.array([float(v) for v in rest[nb + m:]]).reshape(-1, 5)
    return m, sizes, c, ent, header


def affine_block(m, side, rows):
    """Coefficients and constant of vec(sum_i F_i x_i - F_0) for one block."""
    n2 = side * side
    coef = sp.lil_matrix((n2, m))
    const = np.zeros(n2)
    for mat, i, j, v in rows:
        mat, i, j = int(mat), int(i) - 1, int(j) - 1
        for a, b in {(i, j), (j, i)}:
            if mat == 0:
                const[a * side + b] -= v
            else:
                coef[a * side + b, mat - 1] += v
    return coef.tocsr(), const


def parametrize(a, b, tol=1e-10):
    """x = xp + N z spans {x : a x = b}; rows of a are checked for consistency."""
    norms = np.linalg.norm(a, axis=1)
    norms[norms == 0] = 1.0
    a, b = a / norms[:, None], b / norms
    q, r, piv = la.qr(a.T, pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > tol * max(diag[0], 1.0))) if diag.size else 0
    keep = piv[:rank]
    xp = np.linalg.lstsq(a[keep], b[keep], rcond=None)[0]
    if np.max(np.abs(a @ xp - b), initial=0.0) > 1e-8:
        raise SystemExit("inconsistent equalities")
    return xp, q[:, rank:]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("file")
    ap.add_argument("--solver", default="CVXOPT")
    args = ap.parse_args()
    m, sizes, c, ent, header = read(args.file)
    layout = header.get("layout")
    neq = layout[2] if layout else 0
    xp, null = np.zeros(m), np.eye(m)
    if neq:
        lp = [b for b, size in enumerate(sizes, start=1) if size == -2 * neq][-1]
        rows = ent[ent[:, 1] == lp]
        a = np.zeros((neq, m))
        rhs = np.zeros(neq)
        for mat, _, i, _, v in rows:
            i = int(i) - 1
            if i % 2:
                continue
            if int(mat) == 0:
                rhs[i // 2] += v
            else:
                a[i // 2, int(mat) - 1] += v
        xp, null = parametrize(a, rhs)
    z = cp.Variable(null.shape[1])
    x = xp + null @ z
    cons = []
    for b, size in enumerate(sizes, start=1):
        rows = ent[ent[:, 1] == b][:, [0, 2, 3, 4]]
        side = abs(size)
        if size > 0:
            coef, const = affine_block(m, side, rows)
            expr = cp.reshape(coef @ x + const, (side, side), order="C")
            if side == 1:
                cons.append(expr >= 0)
            else:
                cons.append(0.5 * (expr + expr.T) >> 0)
        elif not (neq and side == 2 * neq):
            coef = sp.lil_matrix((side, m))
            const = np.zeros(side)
            for mat, i, _, v in rows:
                if int(mat) == 0:
                    const[int(i) - 1] -= v
                else:
                    coef[int(i) - 1, int(mat) - 1] += v
            cons.append(coef.tocsr() @ x + const >= 0)
    prob = cp.Problem(cp.Minimize(c @ x), cons)
    prob.solve(solver=args.solver)
    out = {"solver": args.solver, "status": prob.status, "sdpa_objective": prob.value}
    if layout is not None and prob.value is not None:
        out["objective"] = header.get("constant", 0.0) - prob.value
    json.dump(out, sys.stdout)
    print()
    return 0 if prob.status == cp.OPTIMAL else 1


if __name__ == "__main__":
    sys.exit(main())
