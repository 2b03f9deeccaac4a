"""Deterministic report assembly from completed session artifacts."""

from __future__ import annotations

import io

from .dataset import overlap_report
from .session import ASSOCIATIONAL_STAMP, Session, Step

#: Note attached when the analyst finishes without a sensitivity run.
SENSITIVITY_MISSING_NOTE = (
    "No sensitivity analysis was run. Running one is strongly recommended: "
    "the effect estimate rests on the assumption that no important "
    "confounder was omitted, and the sensitivity grid quantifies how "
    "fragile the conclusion is to that assumption."
)


def build_report(session: Session) -> dict:
    """Assemble the full JSON report for a session with a computed effect.

    Every number is read from stored session artifacts (or recomputed
    deterministically from the stored dataset, as with overlap histograms),
    so rebuilding the report from a restored session reproduces it exactly.
    """
    session.require(Step.SENSITIVITY)  # effect and everything before it

    overlap_entries = [e.to_dict() for e in overlap_report(session.dataset)]
    n_control, n_treated = session.dataset.group_sizes()
    ranking = session.ranking or {}
    feasible = bool(ranking.get("feasible", {}).get(session.chosen_method, False))

    notes: list[str] = []
    if session.effect.get("balance_stamp"):
        notes.append(session.effect["balance_stamp"])
    if session.method_diverged:
        notes.append(
            f"Analyst chose {session.chosen_method} over the recommendation "
            f"{ranking.get('recommendation')}."
        )
    if session.sensitivity is None:
        notes.append(SENSITIVITY_MISSING_NOTE)
    elif session.sensitivity["analysis"].get("very_sensitive"):
        notes.append(
            "Findings are flagged very sensitive to unobserved confounding: "
            "most observed confounders sit in grid cells where the adjusted "
            "p-value exceeds 0.05. (Heuristic flag; see the sensitivity "
            "section for the rule.)"
        )

    report = {
        "session": {
            "id": session.id,
            "filename": session.filename,
            "created_at": session.created_at,
            "updated_at": session.updated_at,
        },
        "configuration": {
            "roles": dict(session.roles),
            "treated_level": session.treated_level,
            "estimand": session.estimand.value,
            "estimator_config": dict(session.estimator_config or {}),
            "n_rows": session.dataset.n_rows,
            "n_treated": n_treated,
            "n_control": n_control,
            "n_dropped_na": session.dataset.n_dropped_na,
        },
        "overlap": {
            "entries": overlap_entries,
            "n_flagged": sum(1 for e in overlap_entries if e["flag"]),
        },
        "trimming": {
            "events": list(session.trim_log),
            "total_removed": sum(e["n_removed"] for e in session.trim_log),
        },
        "balance": {
            "rows": session.balance["rows"],
            "summaries": session.balance["summaries"],
            "ranking": ranking,
            "failures": dict(session.failures or {}),
        },
        "method": {
            "chosen": session.chosen_method,
            "recommendation": ranking.get("recommendation"),
            "diverged": session.method_diverged,
            "feasible": feasible,
        },
        "effect": dict(session.effect),
        "sensitivity": (
            {"run": False, "note": SENSITIVITY_MISSING_NOTE}
            if session.sensitivity is None
            else {"run": True, **session.sensitivity}
        ),
        "notes": notes,
    }
    return report


def _fmt(v, nd=3) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.{nd}f}"
    return str(v)


def render_markdown(report: dict) -> str:
    """Render the JSON report as a human-readable markdown document."""
    out = io.StringIO()
    w = out.write
    cfg = report["configuration"]
    eff = report["effect"]["effect"]

    w("# Covariate balancing analysis report\n\n")
    w(f"Session `{report['session']['id']}`")
    if report["session"]["filename"]:
        w(f", dataset `{report['session']['filename']}`")
    w(f", created {report['session']['created_at']}.\n\n")

    for note in report["notes"]:
        w(f"> **Note.** {note}\n\n")

    w("## Configuration\n\n")
    w(f"- Estimand: {cfg['estimand']}\n")
    w(f"- Rows: {cfg['n_rows']} ({cfg['n_treated']} treated, {cfg['n_control']} control)")
    if cfg["n_dropped_na"]:
        w(f"; {cfg['n_dropped_na']} rows dropped for missing values")
    w("\n")
    roles = ", ".join(f"{k} = {v}" for k, v in sorted(cfg["roles"].items()))
    w(f"- Roles: {roles}\n")
    w(f"- Seed: {cfg['estimator_config'].get('seed', 'n/a')}\n\n")

    w("## Overlap\n\n")
    flagged = [e for e in report["overlap"]["entries"] if e["flag"]]
    if flagged:
        w(f"{len(flagged)} confounder(s) flagged for support mismatch:\n\n")
        for e in flagged:
            for detail in e["detail"]:
                w(f"- {detail}\n")
        w("\n")
    else:
        w("No support mismatches flagged.\n\n")

    w("## Trimming\n\n")
    events = report["trimming"]["events"]
    if events:
        w(f"{len(events)} trim(s), {report['trimming']['total_removed']} rows removed.\n\n")
        def rule_text(r):
            if r["lower"] is None:
                return f"{r['covariate']} <= {_fmt(r['upper'])}"
            if r["upper"] is None:
                return f"{r['covariate']} >= {_fmt(r['lower'])}"
            return f"{r['covariate']} in [{_fmt(r['lower'])}, {_fmt(r['upper'])}]"

        for i, e in enumerate(events, start=1):
            rules = "; ".join(rule_text(r) for r in e["resolved_rules"])
            w(f"- Trim {i}: removed {e['n_removed']} rows "
              f"({e['n_removed_treated']} treated, {e['n_removed_control']} control); {rules}\n")
        w("\n")
    else:
        w("No rows trimmed.\n\n")

    w("## Balance\n\n")
    w("| method | mean SMD | max SMD | mean KS | max KS | ESS | feasible |\n")
    w("|---|---|---|---|---|---|---|\n")
    summaries = report["balance"]["summaries"]
    feas = report["balance"]["ranking"].get("feasible", {})
    order = ["unweighted"] + report["balance"]["ranking"].get("ranking", [])
    for mid in order:
        if mid not in summaries:
            continue
        s = summaries[mid]
        mark = "" if mid == "unweighted" else ("yes" if feas.get(mid) else "no")
        w(f"| {mid} | {_fmt(s['mean_smd'])} | {_fmt(s['max_smd'])} | {_fmt(s['mean_ks'])} "
          f"| {_fmt(s['max_ks'])} | {_fmt(s['ess'], 1)} | {mark} |\n")
    w("\n")
    w(f"Recommendation: {report['balance']['ranking'].get('message', 'n/a')}\n\n")
    if report["balance"]["failures"]:
        w("Failed methods:\n\n")
        for mid, msg in sorted(report["balance"]["failures"].items()):
            w(f"- {mid}: {msg}\n")
        w("\n")

    w("## Method\n\n")
    w(f"Chosen method: **{report['method']['chosen']}**")
    if report["method"]["diverged"]:
        w(f" (recommendation was {report['method']['recommendation']})")
    w(".\n\n")

    w("## Effect\n\n")
    stamp = report["effect"]["balance_stamp"]
    if stamp:
        w(f"**{stamp}**\n\n")
    w(f"- Model: {report['effect']['model']}\n")
    w(f"- Estimate: {_fmt(eff['estimate'])} "
      f"(95% CI {_fmt(eff['ci_low'])} to {_fmt(eff['ci_high'])})\n")
    w(f"- Standard error: {_fmt(eff['se'])}\n")
    w(f"- p-value: {_fmt(eff['p_value'], 4)}\n")
    w(f"- n = {eff['n']}, ESS = {_fmt(eff['ess'], 1)}\n\n")

    w("## Sensitivity\n\n")
    sens = report["sensitivity"]
    if not sens["run"]:
        w(sens["note"] + "\n")
    else:
        analysis = sens["analysis"]
        grid = analysis["grid"]
        n_cells = len(grid["es_t_values"]) * len(grid["rho_y_values"])
        n_infeasible = sum(sum(1 for v in row if v) for row in grid["infeasible"])
        w(f"Grid of {len(grid['es_t_values'])} x {len(grid['rho_y_values'])} cells "
          f"({n_cells} total, {n_infeasible} infeasible), "
          f"{sens['config']['replications']} replications per cell.\n\n")
        verdict = "very sensitive" if analysis["very_sensitive"] else "not flagged as very sensitive"
        w(f"Verdict: findings are **{verdict}** to unobserved confounding. "
          f"({analysis['very_sensitive_rule']})\n\n")
        w(analysis["procedure"] + "\n")
    return out.getvalue()


def weights_csv(session: Session) -> bytes:
    """Per-row weights for every fitted method, chosen method's column first."""
    session.require(Step.METHOD)
    methods = sorted(session.weight_sets)
    if session.chosen_method in methods:
        methods.remove(session.chosen_method)
        methods.insert(0, session.chosen_method)
    t = session.dataset.treatment_values()
    out = io.StringIO()
    out.write("row_id,treatment," + ",".join(methods) + "\n")
    for i, rid in enumerate(session.dataset.row_ids):
        cells = [str(int(rid)), str(int(t[i]))]
        cells += [repr(float(session.weight_sets[m].weights[i])) for m in methods]
        out.write(",".join(cells) + "\n")
    return out.getvalue().encode()


def balance_csv(session: Session) -> bytes:
    """Per-covariate SMD and KS, unweighted and per method, as CSV."""
    session.require(Step.METHOD)
    rows = session.balance["rows"]
    methods = sorted(session.weight_sets)
    out = io.StringIO()
    header = ["covariate", "smd_unweighted", "ks_unweighted"]
    header += [f"smd_{m}" for m in methods] + [f"ks_{m}" for m in methods]
    out.write(",".join(header) + "\n")
    for r in rows:
        cells = [r["covariate"], repr(float(r["smd_unweighted"])), repr(float(r["ks_unweighted"]))]
        cells += [repr(float(r["smd"][m])) for m in methods]
        cells += [repr(float(r["ks"][m])) for m in methods]
        out.write(",".join(cells) + "\n")
    return out.getvalue().encode()
