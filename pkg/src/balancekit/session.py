"""Analysis sessions with an append-only on-disk event log.

Store format: one UTF-8 JSON-Lines file per session at ``<root>/<id>.jsonl``.
Each line is an event object ``{"event": <name>, "at": <ISO-8601 UTC>,
"payload": {...}}``. The first line is always a ``created`` event carrying
the uploaded CSV (base64) and its filename; later lines record completed
steps. State is reconstructed by replaying events in order, and an event
for an earlier step invalidates everything downstream of it (re-assigning
roles discards weights, a new trim discards weights, and so on). The file
is never rewritten, so a crash mid-append loses at most the final line.
"""

from __future__ import annotations

import base64
import binascii
import enum
import io
import json
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .balance import MethodRanking, balance_table, recommend_method
from .dataset import Dataset, TrimRule, apply_trim, assign_roles, load_csv, overlap_report
from .estimators import EstimatorConfig, run_all
from .outcome import EffectModel, doubly_robust_effect, weighted_means_effect
from .sensitivity import SensitivityConfig, ov_analysis
from .weights import Estimand, WeightSet

#: Balance stamp attached to effects whose chosen method failed the threshold.
ASSOCIATIONAL_STAMP = "associational — balance threshold not met"


class StepOrderError(RuntimeError):
    """A step was requested before its prerequisite completed."""

    def __init__(self, missing: str, message: str):
        super().__init__(message)
        self.missing = missing


class StaleJobError(RuntimeError):
    """A job finished against session state that has since changed."""


class Step(enum.Enum):
    """Workflow steps in wizard order."""

    DATA = "data"
    ROLES = "roles"
    ESTIMAND = "estimand"
    WEIGHTS = "weights"
    METHOD = "method"
    EFFECT = "effect"
    SENSITIVITY = "sensitivity"


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def _jsonify(value):
    """Coerce numpy scalars/arrays and enums into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonify(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else None
    if isinstance(value, enum.Enum):
        return value.value
    return value


def _weight_set_to_dict(w: WeightSet) -> dict:
    return {
        "method_id": w.method_id,
        "estimand": w.estimand.value,
        "weights": [float(v) for v in w.weights],
        "provenance": _jsonify(w.provenance),
    }


def _weight_set_from_dict(d: dict) -> WeightSet:
    return WeightSet(
        method_id=d["method_id"],
        estimand=Estimand(d["estimand"]),
        weights=np.array(d["weights"], dtype=float),
        provenance=d.get("provenance", {}),
    )


class Session:
    """One analysis in progress: dataset, artifacts, and the event log behind them.

    All state-changing methods append to the store before mutating in-memory
    state; replaying the log reproduces the session exactly. Mutators must be
    called under the session's ``lock`` (the HTTP layer and CLI do this); the
    long-running computations themselves happen outside the lock and land via
    ``commit_*`` methods guarded by ``revision``.
    """

    def __init__(self, session_id: str, store: "SessionStore"):
        self.id = session_id
        self.store = store
        self.lock = threading.RLock()
        self.revision = 0
        self.created_at: str | None = None
        self.updated_at: str | None = None
        self.filename: str | None = None
        self.csv_bytes: bytes | None = None
        self.base: Dataset | None = None
        self.roles: dict[str, str] | None = None
        self.treated_level = None
        self.dataset: Dataset | None = None
        self.estimand: Estimand | None = None
        self.trim_log: list[dict] = []
        self.estimator_config: dict | None = None
        self.weight_sets: dict[str, WeightSet] | None = None
        self.failures: dict[str, str] | None = None
        self.balance: dict | None = None
        self.ranking: dict | None = None
        self.chosen_method: str | None = None
        self.method_diverged: bool = False
        self.effect: dict | None = None
        self.sensitivity: dict | None = None

    # ------------------------------------------------------------------ state

    def steps_done(self) -> dict[str, bool]:
        return {
            Step.DATA.value: self.csv_bytes is not None,
            Step.ROLES.value: self.roles is not None,
            Step.ESTIMAND.value: self.estimand is not None,
            Step.WEIGHTS.value: self.weight_sets is not None,
            Step.METHOD.value: self.chosen_method is not None,
            Step.EFFECT.value: self.effect is not None,
            Step.SENSITIVITY.value: self.sensitivity is not None,
        }

    def require(self, step: Step):
        """Raise StepOrderError naming the first missing prerequisite."""
        order = [Step.DATA, Step.ROLES, Step.ESTIMAND, Step.WEIGHTS, Step.METHOD, Step.EFFECT]
        done = self.steps_done()
        for s in order:
            if s is step:
                return
            if not done[s.value]:
                raise StepOrderError(
                    s.value,
                    f"step {step.value!r} requires {s.value!r} to be completed first",
                )

    def summary_payload(self) -> dict:
        d = self.dataset
        payload = {
            "id": self.id,
            "filename": self.filename,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "steps_done": self.steps_done(),
            "estimand": self.estimand.value if self.estimand else None,
            "chosen_method": self.chosen_method,
            "recommendation": (self.ranking or {}).get("recommendation"),
            "trim_events": len(self.trim_log),
            "revision": self.revision,
        }
        if d is not None:
            n_control, n_treated = d.group_sizes()
            payload["n_rows"] = d.n_rows
            payload["n_treated"] = n_treated
            payload["n_control"] = n_control
            payload["n_dropped_na"] = d.n_dropped_na
            payload["confounders"] = [c.name for c in d.confounders()]
        else:
            base = self.base
            payload["n_rows"] = base.n_rows if base is not None else None
            payload["columns"] = base.column_names() if base is not None else None
        return payload

    # ------------------------------------------------------------- event log

    def _append(self, event: str, payload: dict):
        at = _now_iso()
        self.store._append_line(self.id, {"event": event, "at": at, "payload": _jsonify(payload)})
        self._apply(event, at, payload)

    def _apply(self, event: str, at: str, payload: dict):
        """Apply one event to in-memory state (used for both live appends and replay)."""
        handler = getattr(self, f"_on_{event}", None)
        if handler is None:
            raise ValueError(f"unknown event {event!r} in session log")
        handler(payload)
        if self.created_at is None:
            self.created_at = at
        self.updated_at = at
        self.revision += 1

    def _on_created(self, p: dict):
        self.filename = p["filename"]
        try:
            self.csv_bytes = base64.b64decode(p["csv_b64"], validate=True)
        except (binascii.Error, ValueError) as e:
            raise ValueError(f"corrupt session log: invalid csv payload ({e})") from e
        self.base = load_csv(io.BytesIO(self.csv_bytes))

    def _invalidate_from(self, step: Step):
        downstream = {
            Step.ROLES: ("trim_log", "weight_sets", "failures", "balance", "ranking",
                         "chosen_method", "effect", "sensitivity"),
            Step.ESTIMAND: ("weight_sets", "failures", "balance", "ranking",
                            "chosen_method", "effect", "sensitivity"),
            Step.WEIGHTS: ("chosen_method", "effect", "sensitivity"),
            Step.METHOD: ("effect", "sensitivity"),
            Step.EFFECT: ("sensitivity",),
        }[step]
        for name in downstream:
            setattr(self, name, [] if name == "trim_log" else None)
        if "chosen_method" in downstream:
            self.method_diverged = False

    def _on_roles_set(self, p: dict):
        self.roles = dict(p["roles"])
        self.treated_level = p["treated_level"]
        self.dataset = assign_roles(self.base, self.roles, treated_level=self.treated_level)
        self._invalidate_from(Step.ROLES)

    def _on_estimand_set(self, p: dict):
        self.estimand = Estimand(p["estimand"])
        self._invalidate_from(Step.ESTIMAND)

    def _on_trim_applied(self, p: dict):
        rules = [TrimRule.from_dict(r) for r in p["resolved_rules"]]
        result = apply_trim(self.dataset, rules)
        if result.dataset.n_rows != p["n_remaining"]:
            raise ValueError(
                "corrupt session log: replayed trim kept "
                f"{result.dataset.n_rows} rows, log says {p['n_remaining']}"
            )
        self.dataset = result.dataset
        self.trim_log.append(dict(p))
        # estimand survives a trim; only fitted artifacts are discarded
        self._invalidate_from(Step.ESTIMAND)

    def _on_weights_done(self, p: dict):
        self.estimator_config = dict(p["config"])
        self.weight_sets = {
            mid: _weight_set_from_dict(w) for mid, w in p["weight_sets"].items()
        }
        self.failures = dict(p["failures"])
        self.balance = {"rows": p["balance"]["rows"], "summaries": p["balance"]["summaries"]}
        self.ranking = dict(p["ranking"])
        self._invalidate_from(Step.WEIGHTS)

    def _on_method_chosen(self, p: dict):
        self.chosen_method = p["method_id"]
        self.method_diverged = bool(p["diverged"])
        self._invalidate_from(Step.METHOD)

    def _on_effect_done(self, p: dict):
        self.effect = dict(p)
        self._invalidate_from(Step.EFFECT)

    def _on_sensitivity_done(self, p: dict):
        self.sensitivity = dict(p)

    # ------------------------------------------------------------- mutations

    def set_roles(self, roles: dict[str, str], treated_level=None):
        """Validate and record role assignment; rebuilds the working dataset."""
        assign_roles(self.base, roles, treated_level=treated_level)  # validate first
        self._append("roles_set", {"roles": roles, "treated_level": treated_level})

    def set_estimand(self, estimand: str | Estimand):
        value = estimand.value if isinstance(estimand, Estimand) else str(estimand)
        if value not in {e.value for e in Estimand}:
            raise ValueError(f"unknown estimand {value!r}; expected ATE, ATT or ATC")
        self._append("estimand_set", {"estimand": value})

    def preview_trim(self, rules: list[TrimRule], overlay_bins: int | None = None) -> dict:
        """Dry-run a trim: removal counts per group and per rule, no state change.

        With ``overlay_bins`` set, the result also carries ``removed_overlay``:
        per-group counts of the removed rows for every confounder, on the same
        bin edges (or levels) the overlap report uses, so a client can show
        how a bound on one covariate thins the histograms of all the others.
        """
        if self.roles is None:
            raise StepOrderError(Step.ROLES.value, "trim requires roles to be completed first")
        result = apply_trim(self.dataset, rules)
        t = self.dataset.treatment_values()
        removed = np.isin(self.dataset.row_ids, result.removed_row_ids)
        per_confounder = {}
        for rule in result.resolved_rules:
            x = self.dataset.column(rule.covariate).values.astype(float)
            mask = np.zeros(self.dataset.n_rows, dtype=bool)
            if rule.lower is not None:
                mask |= x < rule.lower
            if rule.upper is not None:
                mask |= x > rule.upper
            per_confounder[rule.covariate] = int(mask.sum())
        out = {
            "n_removed": int(removed.sum()),
            "n_removed_treated": int((removed & (t == 1)).sum()),
            "n_removed_control": int((removed & (t == 0)).sum()),
            "n_remaining": int(result.dataset.n_rows),
            "per_rule": per_confounder,
            "resolved_rules": [r.to_dict() for r in result.resolved_rules],
        }
        if overlay_bins is not None:
            out["removed_overlay"] = self._removed_overlay(removed, t, overlay_bins)
        return out

    def _removed_overlay(self, removed: np.ndarray, t: np.ndarray, bins: int) -> list[dict]:
        overlay = []
        for entry in overlap_report(self.dataset, bins=bins):
            col = self.dataset.column(entry.covariate)
            rt, rc = removed & (t == 1), removed & (t == 0)
            if entry.kind == "continuous":
                x = col.values.astype(float)
                edges = np.asarray(entry.bin_edges)
                ht, _ = np.histogram(x[rt], bins=edges)
                hc, _ = np.histogram(x[rc], bins=edges)
            else:
                vt, vc = col.values[rt], col.values[rc]
                ht = [int((vt == lv).sum()) for lv in entry.levels]
                hc = [int((vc == lv).sum()) for lv in entry.levels]
            overlay.append(
                {
                    "covariate": entry.covariate,
                    "kind": entry.kind,
                    "bin_edges": entry.bin_edges,
                    "levels": entry.levels,
                    "removed_treated": [int(v) for v in ht],
                    "removed_control": [int(v) for v in hc],
                }
            )
        return overlay

    def commit_trim(self, rules: list[TrimRule]) -> dict:
        """Apply a trim and append it to the log; discards fitted artifacts."""
        preview = self.preview_trim(rules)
        payload = {
            "rules": [r.to_dict() for r in rules],
            "resolved_rules": preview["resolved_rules"],
            "n_removed": preview["n_removed"],
            "n_removed_treated": preview["n_removed_treated"],
            "n_removed_control": preview["n_removed_control"],
            "n_remaining": preview["n_remaining"],
        }
        self._append("trim_applied", payload)
        return preview

    def weights_inputs(self) -> tuple[Dataset, Estimand, int]:
        """Snapshot (dataset, estimand, revision) for an off-lock weights run."""
        self.require(Step.WEIGHTS)
        return self.dataset, self.estimand, self.revision

    def commit_weights(self, revision: int, config: EstimatorConfig, result, balance_rows,
                       summaries, ranking: MethodRanking):
        """Record a completed batch run; rejects results from stale state."""
        if revision != self.revision:
            raise StaleJobError(
                f"session changed while weights were running (revision {revision} -> {self.revision})"
            )
        payload = {
            "config": config.to_dict(),
            "weight_sets": {mid: _weight_set_to_dict(w) for mid, w in result.weight_sets.items()},
            "failures": dict(result.failures),
            "balance": {
                "rows": [r.to_dict() for r in balance_rows],
                "summaries": {mid: s.to_dict() for mid, s in summaries.items()},
            },
            "ranking": ranking.to_dict(),
        }
        self._append("weights_done", payload)

    def run_weights_sync(self, config: EstimatorConfig | None = None, progress=None):
        """Fit all methods, evaluate balance, rank, and commit, in one call."""
        d, estimand, revision = self.weights_inputs()
        config = config or EstimatorConfig()
        result = run_all(d, estimand, config, progress=progress)
        rows, summaries = balance_table(d, result.weight_sets, estimand)
        ranking = recommend_method(summaries)
        self.commit_weights(revision, config, result, rows, summaries, ranking)

    def choose_method(self, method_id: str):
        self.require(Step.METHOD)
        if method_id not in self.weight_sets:
            known = ", ".join(sorted(self.weight_sets))
            raise ValueError(f"unknown or failed method {method_id!r}; fitted methods: {known}")
        recommendation = self.ranking.get("recommendation")
        self._append(
            "method_chosen",
            {
                "method_id": method_id,
                "recommendation": recommendation,
                "diverged": recommendation is not None and method_id != recommendation,
            },
        )

    def run_effect(self, model: str | EffectModel = EffectModel.DOUBLY_ROBUST,
                   covariate_subset: list[str] | None = None) -> dict:
        """Estimate the effect with the chosen weights and record it."""
        self.require(Step.EFFECT)
        model = EffectModel(model) if not isinstance(model, EffectModel) else model
        w = self.weight_sets[self.chosen_method]
        if model is EffectModel.DOUBLY_ROBUST:
            est = doubly_robust_effect(self.dataset, w, covariate_subset=covariate_subset)
        else:
            est = weighted_means_effect(self.dataset.outcome_values(),
                                        self.dataset.treatment_values(), w)
        feasible = bool(self.ranking["feasible"].get(self.chosen_method, False))
        payload = {
            "effect": est.to_dict(),
            "balance_stamp": None if feasible else ASSOCIATIONAL_STAMP,
            "model": model.value,
            "covariate_subset": covariate_subset,
        }
        self._append("effect_done", payload)
        return payload

    def sensitivity_inputs(self) -> tuple[Dataset, WeightSet, dict, int]:
        """Snapshot (dataset, chosen weights, effect, revision) for an off-lock sweep."""
        self.require(Step.SENSITIVITY)
        return self.dataset, self.weight_sets[self.chosen_method], self.effect, self.revision

    def effect_estimate(self):
        """Rebuild the stored effect as an EffectEstimate object."""
        from .outcome import EffectEstimate

        if self.effect is None:
            raise StepOrderError(Step.EFFECT.value, "no effect has been computed yet")
        eff = self.effect["effect"]
        return EffectEstimate(
            estimate=eff["estimate"], se=eff["se"], ci_low=eff["ci_low"],
            ci_high=eff["ci_high"], p_value=eff["p_value"],
            estimand=Estimand(eff["estimand"]) if eff["estimand"] else None,
            method_id=eff["method_id"], n=eff["n"], ess=eff["ess"],
            model=EffectModel(eff["model"]),
        )

    def commit_sensitivity(self, revision: int, cfg: SensitivityConfig, analysis):
        if revision != self.revision:
            raise StaleJobError(
                f"session changed while sensitivity was running (revision {revision} -> {self.revision})"
            )
        self._append(
            "sensitivity_done",
            {"config": cfg.to_dict(), "analysis": analysis.to_dict()},
        )

    def run_sensitivity_sync(self, cfg: SensitivityConfig | None = None, progress=None):
        """Run the grid sweep against the stored effect and commit the result."""
        d, w, _, revision = self.sensitivity_inputs()
        cfg = cfg or SensitivityConfig()
        analysis = ov_analysis(d, w, self.effect_estimate(), cfg, progress=progress)
        self.commit_sensitivity(revision, cfg, analysis)


class SessionStore:
    """Directory of session event logs, one JSON-Lines file per session."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def _path(self, session_id: str) -> Path:
        if not session_id or any(ch in session_id for ch in "/\\."):
            raise KeyError(session_id)
        return self.root / f"{session_id}.jsonl"

    def _append_line(self, session_id: str, record: dict):
        line = json.dumps(record, ensure_ascii=False, allow_nan=False)
        with open(self._path(session_id), "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def create(self, csv_bytes: bytes, filename: str = "data.csv") -> Session:
        """New session seeded with an uploaded CSV; validates it parses."""
        load_csv(io.BytesIO(csv_bytes))  # reject malformed uploads before storing
        session_id = uuid.uuid4().hex[:12]
        session = Session(session_id, self)
        session._append(
            "created",
            {"filename": filename, "csv_b64": base64.b64encode(csv_bytes).decode()},
        )
        with self._lock:
            self._sessions[session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        """Fetch a live session, restoring it from disk if needed."""
        with self._lock:
            if session_id in self._sessions:
                return self._sessions[session_id]
        path = self._path(session_id)
        if not path.exists():
            raise KeyError(session_id)
        session = Session(session_id, self)
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ValueError(
                        f"corrupt session log {path.name} line {line_no}: {e}"
                    ) from e
                session._apply(record["event"], record["at"], record["payload"])
        with self._lock:
            return self._sessions.setdefault(session_id, session)

    def ids(self) -> list[str]:
        """Session ids present on disk, newest file first."""
        paths = sorted(self.root.glob("*.jsonl"), key=lambda p: p.stat().st_mtime, reverse=True)
        return [p.stem for p in paths]
