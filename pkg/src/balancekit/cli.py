"""Non-interactive command line front end for the six-step workflow.

``balancekit run config.json data.csv`` executes every step and writes
report.json, report.md, weights.csv, balance.csv and sensitivity.json to
the output directory (plus the session event log). Exit codes: 0 on
success, 2 when the analysis completed but no method met the balance
threshold (associational result), 1 on any error.

``balancekit serve`` starts the HTTP service.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset import TrimRule
from .estimators import EstimatorConfig
from .sensitivity import SensitivityConfig
from .session import SessionStore

CONFIG_KEYS = {
    "roles", "treated_level", "estimand", "trim_rules", "method", "effect",
    "sensitivity", "seed", "estimator_config", "output_dir",
}


def _fail(phase: str, message: str) -> int:
    print(f"error: {phase}: {message}", file=sys.stderr)
    return 1


def _load_config(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in ("roles", "estimand"):
        if key not in cfg:
            raise ValueError(f"config is missing required key {key!r}")
    return cfg


def run_analysis(config_path: str, data_path: str, out_dir: str | None = None,
                 verbose: bool = False) -> int:
    """Execute the full workflow per the config; returns the process exit code."""
    log = print if verbose else (lambda *a, **k: None)

    try:
        cfg = _load_config(config_path)
    except (OSError, ValueError, json.JSONDecodeError) as e:
        return _fail("config", str(e))

    out = Path(out_dir or cfg.get("output_dir") or "balancekit_out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        data = Path(data_path).read_bytes()
    except OSError as e:
        return _fail("io", str(e))

    seed = int(cfg.get("seed", 0))
    store = SessionStore(out)
    try:
        session = store.create(data, filename=Path(data_path).name)
    except ValueError as e:
        return _fail("dataset", str(e))
    log(f"session {session.id} created ({session.base.n_rows} rows)")

    try:
        session.set_roles(cfg["roles"], treated_level=cfg.get("treated_level"))
        session.set_estimand(cfg["estimand"])
    except ValueError as e:
        return _fail("dataset", str(e))

    try:
        raw_rules = cfg.get("trim_rules", [])
        if raw_rules:
            rules = [TrimRule.from_dict(r) for r in raw_rules]
            applied = session.commit_trim(rules)
            log(f"trim removed {applied['n_removed']} rows, {applied['n_remaining']} remain")
    except (KeyError, TypeError, ValueError) as e:
        return _fail("trim", str(e))

    try:
        est_cfg_dict = dict(cfg.get("estimator_config", {}))
        est_cfg_dict.setdefault("seed", seed)
        est_cfg = EstimatorConfig.from_dict(est_cfg_dict)

        def progress(done, total):
            log(f"weights: method {done + 1}/{total}")

        session.run_weights_sync(est_cfg, progress=progress if verbose else None)
    except (TypeError, ValueError, FloatingPointError) as e:
        return _fail("estimators", str(e))
    for mid, msg in sorted((session.failures or {}).items()):
        log(f"method {mid} failed: {msg}")

    method = cfg.get("method", "auto")
    recommendation = session.ranking.get("recommendation")
    if method == "auto":
        chosen = recommendation or session.ranking["ranking"][0]
        if recommendation is None:
            log("no method met the balance threshold; best-ranked method used, "
                "result stamped associational")
    else:
        chosen = method
    try:
        session.choose_method(chosen)
    except ValueError as e:
        return _fail("balance", str(e))
    log(f"method: {chosen} (recommendation: {recommendation})")

    effect_cfg = dict(cfg.get("effect", {}))
    try:
        effect_payload = session.run_effect(
            effect_cfg.get("model", "DoublyRobust"),
            covariate_subset=effect_cfg.get("covariate_subset"),
        )
    except ValueError as e:
        return _fail("outcome", str(e))
    eff = effect_payload["effect"]
    log(f"effect: {eff['estimate']:.4f} (95% CI {eff['ci_low']:.4f} to {eff['ci_high']:.4f})")

    sens_setting = cfg.get("sensitivity", True)
    if sens_setting:
        sens_dict = dict(sens_setting) if isinstance(sens_setting, dict) else {}
        sens_dict.setdefault("seed", seed)
        try:
            sens_cfg = SensitivityConfig.from_dict(sens_dict)

            def sens_progress(done, total):
                log(f"sensitivity: cell {done + 1}/{total}")

            session.run_sensitivity_sync(sens_cfg, progress=sens_progress if verbose else None)
        except (TypeError, ValueError, FloatingPointError) as e:
            return _fail("sensitivity", str(e))

    from .report import balance_csv, build_report, render_markdown, weights_csv

    try:
        report = build_report(session)
        (out / "report.json").write_text(
            json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        (out / "report.md").write_text(render_markdown(report), encoding="utf-8")
        (out / "weights.csv").write_bytes(weights_csv(session))
        (out / "balance.csv").write_bytes(balance_csv(session))
        sens_payload = (
            {"run": True, **session.sensitivity}
            if session.sensitivity is not None
            else {"run": False, "note": report["sensitivity"]["note"]}
        )
        (out / "sensitivity.json").write_text(
            json.dumps(sens_payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
    except (OSError, ValueError) as e:
        return _fail("report", str(e))

    print(f"report written to {out}")
    if effect_payload["balance_stamp"]:
        print(f"warning: {effect_payload['balance_stamp']}", file=sys.stderr)
        return 2
    return 0


def serve(host: str, port: int, store_dir: str) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(store_dir), host=host, port=port, log_level="info")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="balancekit",
        description="Covariate balancing analysis: weights, balance, effects, sensitivity.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full workflow from a JSON config")
    p_run.add_argument("config", help="path to the JSON run configuration")
    p_run.add_argument("data", help="path to the CSV dataset")
    p_run.add_argument("--out", default=None, help="output directory (overrides config)")
    p_run.add_argument("-v", "--verbose", action="store_true", help="print step progress")

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--store-dir", default="balancekit_sessions",
                         help="directory for session event logs")

    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; 2 means "completed, associational"
        # here, so usage problems surface as plain errors instead
        return 0 if e.code == 0 else 1
    if args.command == "run":
        return run_analysis(args.config, args.data, out_dir=args.out, verbose=args.verbose)
    return serve(args.host, args.port, args.store_dir)


if __name__ == "__main__":
    sys.exit(main())
