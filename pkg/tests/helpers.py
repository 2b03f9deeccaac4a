"""Shared test helpers: dataset construction and brute-force oracles."""

import io

import numpy as np

from balancekit.dataset import RoleKind, assign_roles, load_csv


def csv_bytes(header, rows):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(str(v) for v in row) + "\n")
    return buf.getvalue().encode()


def dataset_from_arrays(t, y, cont=None, binary=None, cat=None, treated_level=None):
    """Configured Dataset built through the real CSV + role-assignment path."""
    cont = cont or {}
    binary = binary or {}
    cat = cat or {}
    names = ["t", "y", *cont, *binary, *cat]
    arrays = [t, y, *cont.values(), *binary.values(), *cat.values()]
    rows = list(zip(*[list(a) for a in arrays]))
    d = load_csv(csv_bytes(names, rows))
    roles = {"t": RoleKind.TREATMENT, "y": RoleKind.OUTCOME}
    roles.update({k: RoleKind.CONTINUOUS_CONFOUNDER for k in cont})
    roles.update({k: RoleKind.BINARY_CONFOUNDER for k in binary})
    roles.update({k: RoleKind.CATEGORICAL_CONFOUNDER for k in cat})
    return assign_roles(d, roles, treated_level=treated_level)


def classical_ks(xt, xc):
    """Two-sample KS by brute force over every pooled sample point."""
    pts = np.unique(np.concatenate([xt, xc]))
    best = 0.0
    for z in pts:
        ft = (np.asarray(xt) <= z).mean()
        fc = (np.asarray(xc) <= z).mean()
        best = max(best, abs(ft - fc))
    return best
