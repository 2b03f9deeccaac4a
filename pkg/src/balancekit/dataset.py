"""Tabular data ingestion, column roles, group summaries, overlap diagnostics,
trimming, and design-matrix construction."""

from __future__ import annotations

import csv
import enum
import io
import os
from dataclasses import dataclass, field, replace

import numpy as np

#: Tokens treated as missing values when parsing CSV input.
DEFAULT_NA_TOKENS = ("", "NA")


class RoleKind(enum.Enum):
    TREATMENT = "treatment"
    OUTCOME = "outcome"
    CONTINUOUS_CONFOUNDER = "continuous_confounder"
    BINARY_CONFOUNDER = "binary_confounder"
    CATEGORICAL_CONFOUNDER = "categorical_confounder"
    IGNORED = "ignored"


CONFOUNDER_KINDS = frozenset(
    {
        RoleKind.CONTINUOUS_CONFOUNDER,
        RoleKind.BINARY_CONFOUNDER,
        RoleKind.CATEGORICAL_CONFOUNDER,
    }
)


@dataclass(frozen=True)
class ColumnRole:
    kind: RoleKind


@dataclass
class Column:
    """One named column: float values for numeric columns, strings otherwise."""

    name: str
    role: ColumnRole
    values: np.ndarray

    @property
    def is_numeric(self) -> bool:
        return self.values.dtype.kind == "f"

    def levels(self) -> list:
        """Distinct values in sorted order (categorical columns)."""
        return sorted(set(self.values.tolist()), key=str)


class Tail(enum.Enum):
    LOWER = "lower"
    UPPER = "upper"
    BOTH = "both"


@dataclass(frozen=True)
class TrimRule:
    """Row-removal rule on one confounder.

    Bounds are raw values by default; with ``quantile=True`` they are sample
    quantiles in (0, 1), resolved against the dataset the rule is applied to.
    Rows strictly below ``lower`` or strictly above ``upper`` are removed.
    """

    covariate: str
    tail: Tail
    lower: float | None = None
    upper: float | None = None
    quantile: bool = False

    def __post_init__(self):
        if self.tail in (Tail.LOWER, Tail.BOTH) and self.lower is None:
            raise ValueError(f"trim rule on {self.covariate!r}: tail={self.tail.value} needs a lower bound")
        if self.tail in (Tail.UPPER, Tail.BOTH) and self.upper is None:
            raise ValueError(f"trim rule on {self.covariate!r}: tail={self.tail.value} needs an upper bound")
        if self.tail is Tail.LOWER and self.upper is not None:
            raise ValueError(f"trim rule on {self.covariate!r}: lower-tail rule must not set an upper bound")
        if self.tail is Tail.UPPER and self.lower is not None:
            raise ValueError(f"trim rule on {self.covariate!r}: upper-tail rule must not set a lower bound")
        if self.lower is not None and self.upper is not None and not self.lower < self.upper:
            raise ValueError(f"trim rule on {self.covariate!r}: lower bound must be below upper bound")
        if self.quantile:
            for b in (self.lower, self.upper):
                if b is not None and not 0 < b < 1:
                    raise ValueError(f"trim rule on {self.covariate!r}: quantile bounds must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "covariate": self.covariate,
            "tail": self.tail.value,
            "lower": self.lower,
            "upper": self.upper,
            "quantile": self.quantile,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrimRule":
        return TrimRule(
            covariate=d["covariate"],
            tail=Tail(d["tail"]),
            lower=d.get("lower"),
            upper=d.get("upper"),
            quantile=bool(d.get("quantile", False)),
        )


@dataclass
class Dataset:
    """Immutable table with role metadata. Row ids are stable across trimming."""

    columns: list[Column]
    row_ids: np.ndarray
    configured: bool = False
    treated_level: object = None
    n_dropped_na: int = 0

    def __post_init__(self):
        self.row_ids = np.asarray(self.row_ids)
        for c in self.columns:
            c.values.setflags(write=False)
        self.row_ids.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return int(self.row_ids.size)

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(f"no column named {name!r}")

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def _require_configured(self):
        if not self.configured:
            raise ValueError("roles have not been assigned yet")

    def treatment_column(self) -> Column:
        self._require_configured()
        return next(c for c in self.columns if c.role.kind is RoleKind.TREATMENT)

    def outcome_column(self) -> Column:
        self._require_configured()
        return next(c for c in self.columns if c.role.kind is RoleKind.OUTCOME)

    def confounders(self) -> list[Column]:
        self._require_configured()
        return [c for c in self.columns if c.role.kind in CONFOUNDER_KINDS]

    def treatment_values(self) -> np.ndarray:
        """Coded 0/1 treatment indicator."""
        return self.treatment_column().values.astype(int)

    def outcome_values(self) -> np.ndarray:
        return self.outcome_column().values

    def group_sizes(self) -> tuple[int, int]:
        """(n_control, n_treated)."""
        t = self.treatment_values()
        return int((t == 0).sum()), int((t == 1).sum())

    def with_continuous_confounder(self, name: str, values: np.ndarray) -> "Dataset":
        """New dataset with an appended continuous confounder column."""
        values = np.asarray(values, dtype=float)
        if values.size != self.n_rows:
            raise ValueError("appended column length must match the row count")
        if name in self.column_names():
            raise ValueError(f"column {name!r} already exists")
        cols = [replace(c) for c in self.columns]
        cols.append(Column(name, ColumnRole(RoleKind.CONTINUOUS_CONFOUNDER), values))
        return Dataset(
            columns=cols,
            row_ids=self.row_ids.copy(),
            configured=self.configured,
            treated_level=self.treated_level,
            n_dropped_na=self.n_dropped_na,
        )

    def _subset(self, keep_mask: np.ndarray) -> "Dataset":
        cols = [Column(c.name, c.role, c.values[keep_mask].copy()) for c in self.columns]
        return Dataset(
            columns=cols,
            row_ids=self.row_ids[keep_mask].copy(),
            configured=self.configured,
            treated_level=self.treated_level,
            n_dropped_na=self.n_dropped_na,
        )


def _parse_float(token: str) -> float | None:
    try:
        v = float(token)
    except ValueError:
        return None
    return v if np.isfinite(v) else None


def load_csv(
    source,
    na_tokens: tuple[str, ...] = DEFAULT_NA_TOKENS,
    numeric_columns: list[str] | None = None,
) -> Dataset:
    """Parse a CSV byte stream, file path, or text buffer into a Dataset.

    The first record must be a header row. Columns where every non-missing
    token parses as a finite number become float columns (missing -> NaN);
    anything else stays as strings. All roles start as Ignored. Rows holding a
    missing token anywhere are counted in ``n_dropped_na`` candidates only at
    role assignment; here they are kept.

    ``numeric_columns`` forces named columns to parse numerically, raising on
    the first offending token with its column and line number.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, bytes):
        data = source
    else:
        data = source.read()
        if isinstance(data, str):
            data = data.encode("utf-8")
    text = data.decode("utf-8-sig")

    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty file: no header row") from None
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise ValueError(f"duplicate header names: {', '.join(dupes)}")
    if any(h == "" for h in header):
        raise ValueError("blank column name in header")

    na = set(na_tokens)
    raw_cols: list[list[str | None]] = [[] for _ in header]
    n_rows = 0
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(
                f"malformed CSV at line {line_no}: expected {len(header)} fields, got {len(row)}"
            )
        for j, token in enumerate(row):
            token = token.strip()
            raw_cols[j].append(None if token in na else token)
        n_rows += 1
    if n_rows == 0:
        raise ValueError("empty file: header but no data rows")

    forced = set(numeric_columns or [])
    unknown_forced = forced - set(header)
    if unknown_forced:
        raise ValueError(f"numeric_columns not in header: {', '.join(sorted(unknown_forced))}")

    columns: list[Column] = []
    for j, name in enumerate(header):
        tokens = raw_cols[j]
        parsed = [None if tok is None else _parse_float(tok) for tok in tokens]
        bad = next(
            (i for i, (tok, val) in enumerate(zip(tokens, parsed)) if tok is not None and val is None),
            None,
        )
        if name in forced and bad is not None:
            raise ValueError(
                f"non-numeric token {tokens[bad]!r} in numeric column {name!r} at line {bad + 2}"
            )
        if bad is None:
            values = np.array(
                [np.nan if v is None else v for v in parsed], dtype=float
            )
        else:
            values = np.array(["" if tok is None else tok for tok in tokens], dtype=object)
            # preserve missingness distinctly from empty strings
            for i, tok in enumerate(tokens):
                if tok is None:
                    values[i] = None
        columns.append(Column(name, ColumnRole(RoleKind.IGNORED), values))

    return Dataset(columns=columns, row_ids=np.arange(n_rows))


def _missing_mask(col: Column) -> np.ndarray:
    if col.is_numeric:
        return np.isnan(col.values)
    return np.array([v is None for v in col.values], dtype=bool)


def assign_roles(
    d: Dataset,
    roles: dict[str, str | RoleKind | ColumnRole],
    treated_level=None,
) -> Dataset:
    """Validate roles and return a configured dataset.

    Exactly one treatment and one outcome column plus at least one confounder
    are required. Rows with missing values in any role-assigned column are
    dropped and counted. The treatment column must carry exactly two distinct
    values; it is recoded so the treated level maps to 1. When the raw values
    are already {0, 1}, the treated level defaults to 1; otherwise
    ``treated_level`` must name it explicitly.
    """
    role_map: dict[str, ColumnRole] = {}
    names = d.column_names()
    for name, role in roles.items():
        if name not in names:
            raise ValueError(f"role assigned to unknown column {name!r}")
        if not isinstance(role, ColumnRole):
            role = ColumnRole(RoleKind(role))
        role_map[name] = role

    kinds = [r.kind for r in role_map.values()]
    if kinds.count(RoleKind.TREATMENT) != 1:
        raise ValueError("exactly one treatment column is required")
    if kinds.count(RoleKind.OUTCOME) != 1:
        raise ValueError("exactly one outcome column is required")
    if not any(k in CONFOUNDER_KINDS for k in kinds):
        raise ValueError("at least one confounder column is required")

    columns = [
        Column(c.name, role_map.get(c.name, ColumnRole(RoleKind.IGNORED)), c.values.copy())
        for c in d.columns
    ]
    assigned = [c for c in columns if c.role.kind is not RoleKind.IGNORED]

    drop = np.zeros(d.n_rows, dtype=bool)
    for c in assigned:
        drop |= _missing_mask(c)
    keep = ~drop
    n_dropped = int(drop.sum())
    if not keep.any():
        raise ValueError("every row has a missing value in a role-assigned column")
    columns = [Column(c.name, c.role, c.values[keep].copy()) for c in columns]
    row_ids = d.row_ids[keep].copy()

    tcol = next(c for c in columns if c.role.kind is RoleKind.TREATMENT)
    distinct = sorted(set(tcol.values.tolist()), key=str)
    if len(distinct) < 2:
        raise ValueError("treatment column has one group empty (a single distinct value)")
    if len(distinct) > 2:
        raise ValueError(
            f"treatment column has {len(distinct)} distinct values; exactly 2 required"
        )
    if treated_level is None:
        if tcol.is_numeric and set(distinct) == {0.0, 1.0}:
            treated_level = 1.0
        else:
            raise ValueError(
                f"treated_level must be given for treatment values {distinct!r}"
            )
    else:
        if tcol.is_numeric:
            treated_level = float(treated_level)
        if treated_level not in distinct:
            raise ValueError(
                f"treated_level {treated_level!r} not among treatment values {distinct!r}"
            )
    tcol.values = (tcol.values == treated_level).astype(float)

    ycol = next(c for c in columns if c.role.kind is RoleKind.OUTCOME)
    if not ycol.is_numeric:
        bad_row = next(i for i, v in enumerate(ycol.values) if _parse_float(str(v)) is None)
        raise ValueError(
            f"outcome column {ycol.name!r} is not numeric (first offending row {bad_row})"
        )

    for c in columns:
        if c.role.kind is RoleKind.CONTINUOUS_CONFOUNDER and not c.is_numeric:
            bad_row = next(i for i, v in enumerate(c.values) if _parse_float(str(v)) is None)
            raise ValueError(
                f"continuous confounder {c.name!r} has non-numeric values (first offending row {bad_row})"
            )
        if c.role.kind is RoleKind.BINARY_CONFOUNDER:
            if not c.is_numeric or not set(np.unique(c.values).tolist()) <= {0.0, 1.0}:
                raise ValueError(
                    f"binary confounder {c.name!r} must be coded 0/1; use a categorical role otherwise"
                )
        if c.role.kind is RoleKind.CATEGORICAL_CONFOUNDER:
            if len(set(c.values.tolist())) < 2:
                raise ValueError(f"categorical confounder {c.name!r} has no variation")

    return Dataset(
        columns=columns,
        row_ids=row_ids,
        configured=True,
        treated_level=treated_level,
        n_dropped_na=n_dropped,
    )


@dataclass
class CovariateSummary:
    """Location and spread of one covariate within one treatment group."""

    covariate: str
    group: str
    n: int
    mean: float
    sd: float
    median: float
    min: float
    max: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "covariate": self.covariate,
            "group": self.group,
            "n": self.n,
            "mean": self.mean,
            "sd": self.sd,
            "median": self.median,
            "min": self.min,
            "max": self.max,
            "degenerate": self.degenerate,
        }


def summary_columns(d: Dataset) -> list[tuple[str, np.ndarray]]:
    """Numeric views of the confounders: continuous and binary raw, categorical
    expanded to one 0/1 indicator per level."""
    out: list[tuple[str, np.ndarray]] = []
    for col in d.confounders():
        if col.role.kind is RoleKind.CATEGORICAL_CONFOUNDER:
            for level in col.levels():
                out.append((f"{col.name}:{level}", (col.values == level).astype(float)))
        else:
            out.append((col.name, col.values.astype(float)))
    return out


def summarize(d: Dataset) -> list[CovariateSummary]:
    """Per-group summary statistics for every confounder (categoricals per level)."""
    t = d.treatment_values()
    out: list[CovariateSummary] = []
    for name, values in summary_columns(d):
        for group, mask in (("control", t == 0), ("treated", t == 1)):
            x = values[mask]
            degenerate = x.size == 1
            out.append(
                CovariateSummary(
                    covariate=name,
                    group=group,
                    n=int(x.size),
                    mean=float(x.mean()),
                    sd=0.0 if degenerate else float(x.std(ddof=1)),
                    median=float(np.median(x)),
                    min=float(x.min()),
                    max=float(x.max()),
                    degenerate=degenerate,
                )
            )
    return out


@dataclass
class OverlapEntry:
    """Shared-bin histograms (or per-level counts) for one confounder per group,
    with a support-mismatch flag."""

    covariate: str
    kind: str
    bin_edges: list[float] | None
    levels: list | None
    treated_counts: list[int]
    control_counts: list[int]
    treated_min: float | None
    treated_max: float | None
    control_min: float | None
    control_max: float | None
    flag: bool
    detail: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "covariate": self.covariate,
            "kind": self.kind,
            "bin_edges": self.bin_edges,
            "levels": self.levels,
            "treated_counts": self.treated_counts,
            "control_counts": self.control_counts,
            "treated_min": self.treated_min,
            "treated_max": self.treated_max,
            "control_min": self.control_min,
            "control_max": self.control_max,
            "flag": self.flag,
            "detail": self.detail,
        }


def overlap_report(d: Dataset, bins: int = 10) -> list[OverlapEntry]:
    """Per-confounder overlap diagnostics.

    Continuous confounders get per-group histograms over shared bin edges
    spanning the pooled range; the flag is set when one group's support
    extends beyond the other's by more than one bin width. Binary and
    categorical confounders are flagged when any level is present in only one
    group. The flag is a diagnostic for the analyst, never an automatic trim.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    t = d.treatment_values()
    out: list[OverlapEntry] = []
    for col in d.confounders():
        if col.role.kind is RoleKind.CONTINUOUS_CONFOUNDER:
            x = col.values.astype(float)
            xt, xc = x[t == 1], x[t == 0]
            lo, hi = float(x.min()), float(x.max())
            span = hi - lo if hi > lo else 1e-12
            edges = np.linspace(lo, lo + span, bins + 1)
            ht, _ = np.histogram(xt, bins=edges)
            hc, _ = np.histogram(xc, bins=edges)
            width = span / bins
            detail = []
            if xt.min() < xc.min() - width:
                detail.append(f"{col.name}: treated support extends below control's lower tail")
            if xc.min() < xt.min() - width:
                detail.append(f"{col.name}: control support extends below treated's lower tail")
            if xt.max() > xc.max() + width:
                detail.append(f"{col.name}: treated support extends above control's upper tail")
            if xc.max() > xt.max() + width:
                detail.append(f"{col.name}: control support extends above treated's upper tail")
            out.append(
                OverlapEntry(
                    covariate=col.name,
                    kind="continuous",
                    bin_edges=[float(e) for e in edges],
                    levels=None,
                    treated_counts=ht.tolist(),
                    control_counts=hc.tolist(),
                    treated_min=float(xt.min()),
                    treated_max=float(xt.max()),
                    control_min=float(xc.min()),
                    control_max=float(xc.max()),
                    flag=bool(detail),
                    detail=detail,
                )
            )
        else:
            kind = (
                "binary"
                if col.role.kind is RoleKind.BINARY_CONFOUNDER
                else "categorical"
            )
            levels = [0.0, 1.0] if kind == "binary" else col.levels()
            vt, vc = col.values[t == 1], col.values[t == 0]
            ht = [int((vt == lv).sum()) for lv in levels]
            hc = [int((vc == lv).sum()) for lv in levels]
            detail = []
            for lv, nt, nc in zip(levels, ht, hc):
                if nt == 0 and nc > 0:
                    detail.append(f"{col.name}: level {lv!r} absent from the treated group")
                if nc == 0 and nt > 0:
                    detail.append(f"{col.name}: level {lv!r} absent from the control group")
            out.append(
                OverlapEntry(
                    covariate=col.name,
                    kind=kind,
                    bin_edges=None,
                    levels=levels,
                    treated_counts=ht,
                    control_counts=hc,
                    treated_min=None,
                    treated_max=None,
                    control_min=None,
                    control_max=None,
                    flag=bool(detail),
                    detail=detail,
                )
            )
    return out


@dataclass
class TrimResult:
    """Outcome of a trim: the surviving dataset, removed row ids, and the rules
    with quantile bounds resolved to raw-value thresholds.

    Re-applying ``resolved_rules`` to ``dataset`` removes nothing, which is the
    idempotence contract; quantile rules are resolved against the data they
    were applied to, so only the resolved form is re-appliable.
    """

    dataset: Dataset
    removed_row_ids: np.ndarray
    resolved_rules: list[TrimRule]


def apply_trim(d: Dataset, rules: list[TrimRule]) -> TrimResult:
    """Remove whole rows violating any rule; error if a treatment group would
    drop below 2 rows (dataset unchanged)."""
    confounder_names = {c.name for c in d.confounders()}
    resolved: list[TrimRule] = []
    keep = np.ones(d.n_rows, dtype=bool)
    for rule in rules:
        if rule.covariate not in confounder_names:
            raise ValueError(f"trim rule references non-confounder column {rule.covariate!r}")
        col = d.column(rule.covariate)
        if not col.is_numeric:
            raise ValueError(f"trim rule on categorical column {rule.covariate!r} is not supported")
        x = col.values.astype(float)
        lower, upper = rule.lower, rule.upper
        if rule.quantile:
            if lower is not None:
                lower = float(np.quantile(x, lower))
            if upper is not None:
                upper = float(np.quantile(x, upper))
            if lower is not None and upper is not None and not lower < upper:
                raise ValueError(
                    f"trim rule on {rule.covariate!r}: resolved quantile bounds collapse ({lower} >= {upper})"
                )
        resolved.append(TrimRule(rule.covariate, rule.tail, lower, upper, quantile=False))
        if lower is not None:
            keep &= x >= lower
        if upper is not None:
            keep &= x <= upper

    t = d.treatment_values()
    if (t[keep] == 1).sum() < 2 or (t[keep] == 0).sum() < 2:
        raise ValueError(
            "trim would leave a treatment group with fewer than 2 rows; dataset unchanged"
        )
    removed = d.row_ids[~keep].copy()
    return TrimResult(dataset=d._subset(keep), removed_row_ids=removed, resolved_rules=resolved)


@dataclass
class DesignMatrix:
    """Numeric feature matrix with metadata tracing features to confounders."""

    matrix: np.ndarray
    names: list[str]
    sources: list[str]
    expansion_order: int

    @property
    def n_rows(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.matrix.shape[1])


def _orthogonal_polynomials(z: np.ndarray, m: int, name: str) -> list[np.ndarray]:
    """Columns z, z^2, ..., z^m orthogonalized sequentially (Gram-Schmidt on
    the sample inner product) and scaled to sample sd 1."""
    n = z.size
    cols: list[np.ndarray] = []
    basis = [np.ones(n)]
    for degree in range(1, m + 1):
        v = z**degree
        for u in basis:
            v = v - (v @ u) / (u @ u) * u
        norm = float(np.sqrt((v @ v) / (n - 1)))
        if norm < 1e-10 * max(1.0, float(np.abs(z).max()) ** degree):
            raise ValueError(
                f"column {name!r}: degree-{degree} polynomial is degenerate (too few distinct values)"
            )
        v = v / norm
        cols.append(v)
        basis.append(v)
    return cols


def design_matrix(d: Dataset, m: int = 1, drop_reference: bool = False) -> DesignMatrix:
    """Numeric design for model fitting and balance constraints.

    Continuous confounders are standardized to mean 0, sd 1 and expanded to
    orthogonal polynomial columns of degree <= m. Binary confounders pass
    through as 0/1. Categorical confounders one-hot encode every level;
    ``drop_reference=True`` drops the first level per categorical so the
    matrix can sit beside an intercept without rank deficiency.
    """
    if m not in (1, 2, 3):
        raise ValueError("expansion order m must be 1, 2 or 3")
    d._require_configured()
    feats: list[np.ndarray] = []
    names: list[str] = []
    sources: list[str] = []
    for col in d.confounders():
        if col.role.kind is RoleKind.CONTINUOUS_CONFOUNDER:
            x = col.values.astype(float)
            sd = float(x.std(ddof=1))
            if sd == 0:
                raise ValueError(f"continuous confounder {col.name!r} is constant")
            z = (x - x.mean()) / sd
            for degree, v in enumerate(_orthogonal_polynomials(z, m, col.name), start=1):
                feats.append(v)
                names.append(col.name if degree == 1 else f"{col.name}^{degree}")
                sources.append(col.name)
        elif col.role.kind is RoleKind.BINARY_CONFOUNDER:
            feats.append(col.values.astype(float))
            names.append(col.name)
            sources.append(col.name)
        else:
            levels = col.levels()
            if drop_reference:
                levels = levels[1:]
            for level in levels:
                feats.append((col.values == level).astype(float))
                names.append(f"{col.name}:{level}")
                sources.append(col.name)
    matrix = np.column_stack(feats) if feats else np.empty((d.n_rows, 0))
    return DesignMatrix(matrix=matrix, names=names, sources=sources, expansion_order=m)
