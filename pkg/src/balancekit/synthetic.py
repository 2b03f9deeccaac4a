"""Seeded synthetic datasets with known treatment effects for demos and tests."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, assign_roles, load_csv

#: Role map shared by every generator in this module.
ROLES = {
    "t": "treatment",
    "y": "outcome",
    "x1": "continuous_confounder",
    "x2": "continuous_confounder",
    "x3": "binary_confounder",
    "g": "categorical_confounder",
}


@dataclass
class SyntheticData:
    """One generated dataset plus the ground truth behind it.

    ``columns`` maps column name to a value array (numeric or string).
    ``true_effect`` is the constant treatment effect built into the outcome
    and ``true_propensity`` the assignment probability each row was drawn
    with, so tests can compare estimates against the generating process.
    """

    columns: dict[str, np.ndarray]
    roles: dict[str, str]
    treated_level: str
    true_effect: float
    true_propensity: np.ndarray
    hidden: dict[str, np.ndarray] = field(default_factory=dict)

    def n_rows(self) -> int:
        return len(self.true_propensity)

    def to_csv_bytes(self) -> bytes:
        """Render the visible columns as an in-memory CSV file."""
        names = list(self.columns)
        out = io.StringIO()
        out.write(",".join(names) + "\n")
        cols = [self.columns[k] for k in names]
        for i in range(self.n_rows()):
            cells = []
            for col in cols:
                v = col[i]
                cells.append(f"{v:.12g}" if isinstance(v, (float, np.floating)) else str(v))
            out.write(",".join(cells) + "\n")
        return out.getvalue().encode()

    def to_dataset(self) -> Dataset:
        """Round-trip through the CSV loader and assign the canonical roles."""
        raw = load_csv(io.BytesIO(self.to_csv_bytes()))
        return assign_roles(raw, dict(self.roles), treated_level=self.treated_level)

    def write_csv(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_csv_bytes())


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def confounded_linear(
    seed: int,
    n: int = 2000,
    tau: float = 2.0,
    noise: float = 1.0,
    hidden_strength: float = 0.0,
) -> SyntheticData:
    """Mixed-type confounded design with a constant linear treatment effect.

    Four confounders (two continuous, one binary, one three-level
    categorical) drive both a logistic treatment assignment and a linear
    outcome, so the unadjusted contrast is biased while the adjusted effect
    is ``tau`` exactly. With ``hidden_strength`` > 0 an extra standard
    normal confounder enters both models but is withheld from the visible
    columns; it is returned in ``hidden`` for oracle comparisons.
    """
    if n < 20:
        raise ValueError("n must be at least 20")
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    x2 = rng.gamma(2.0, 1.0, size=n)
    x3 = (rng.random(n) < 0.4).astype(float)
    g = rng.choice(np.array(["a", "b", "c"]), size=n, p=[0.5, 0.3, 0.2])
    gb = (g == "b").astype(float)

    eta = 0.8 * x1 - 0.5 * x2 + 0.7 * x3 + 0.4 * gb
    signal = 1.5 * x1 + 0.7 * x2 + 1.0 * x3 + 0.5 * gb
    hidden: dict[str, np.ndarray] = {}
    if hidden_strength > 0:
        h = rng.normal(size=n)
        eta = eta + hidden_strength * h
        signal = signal + hidden_strength * h
        hidden["h"] = h

    ps = _sigmoid(eta)
    t = (rng.random(n) < ps).astype(int)
    y = tau * t + signal + noise * rng.normal(size=n)

    columns = {
        "t": t,
        "y": np.round(y, 12),
        "x1": np.round(x1, 12),
        "x2": np.round(x2, 12),
        "x3": x3.astype(int),
        "g": g,
    }
    return SyntheticData(
        columns=columns,
        roles=dict(ROLES),
        treated_level="1",
        true_effect=tau,
        true_propensity=ps,
        hidden=hidden,
    )


def null_linear(seed: int, n: int = 2000, noise: float = 1.0) -> SyntheticData:
    """Same design as :func:`confounded_linear` with a zero treatment effect."""
    return confounded_linear(seed, n=n, tau=0.0, noise=noise)
