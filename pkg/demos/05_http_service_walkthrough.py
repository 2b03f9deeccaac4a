"""Full six-step walkthrough against the HTTP service, in process.

The service wraps the same session workflow the CLI uses: upload a CSV,
assign roles, pick an estimand, trim, fit weights (async job), choose a
method, estimate the effect, and optionally map sensitivity to a hidden
confounder. Here we drive it with an in-process test client so the demo
needs no running server; `balancekit serve --port 8000` exposes the same
endpoints over a real socket.
"""

import tempfile
import time
from pathlib import Path

from fastapi.testclient import TestClient

from balancekit.service import create_app

DATA = Path(__file__).parent / "data" / "synthetic_mixed.csv"
ROLES = {
    "t": "treatment",
    "y": "outcome",
    "x1": "continuous_confounder",
    "x2": "continuous_confounder",
    "x3": "binary_confounder",
    "g": "categorical_confounder",
}


def wait_for(client, url, label):
    while True:
        status = client.get(url).json()
        if status["state"] != "running":
            done, total = status["progress"]["done"], status["progress"]["total"]
            print(f"  {label}: {status['state']} ({done}/{total})")
            return status
        time.sleep(0.2)


def main():
    store = tempfile.mkdtemp(prefix="balancekit-demo-")
    client = TestClient(create_app(store))

    # step ordering is enforced server-side: asking for balance before any
    # weights have been fitted names the step that is missing.
    r = client.post("/sessions", files={"file": ("demo.csv", DATA.read_bytes(), "text/csv")})
    sid = r.json()["id"]
    print(f"created session {sid} with {r.json()['n_rows']} rows")
    r = client.get(f"/sessions/{sid}/balance")
    print(f"balance before weights -> {r.status_code}, missing step: {r.json()['missing']}")

    client.put(f"/sessions/{sid}/roles", json={"roles": ROLES, "treated_level": "1"})
    client.put(f"/sessions/{sid}/estimand", json={"estimand": "ATE"})
    print("\nroles + estimand set; overlap flags:")
    for entry in client.get(f"/sessions/{sid}/overlap").json()["entries"]:
        print(f"  {entry['covariate']:8s} {'FLAG' if entry['flag'] else 'ok'}")

    # dry-run the trim first, then commit the same rule.
    rule = {"covariate": "x2", "tail": "upper", "upper": 0.99, "quantile": True}
    preview = client.post(
        f"/sessions/{sid}/trim", json={"rules": [rule], "dry_run": True}
    ).json()
    print(f"\ntrim dry-run would remove {preview['n_removed']} rows")
    committed = client.post(f"/sessions/{sid}/trim", json={"rules": [rule]}).json()
    print(f"committed trim removed {committed['n_removed']} rows")

    print("\nfitting all nine weightings (async job):")
    client.post(
        f"/sessions/{sid}/weights",
        json={"config": {"seed": 11, "gbm": {"max_trees": 600}}},
    )
    wait_for(client, f"/sessions/{sid}/weights/status", "weights")

    balance = client.get(f"/sessions/{sid}/balance").json()
    ranking = balance["ranking"]
    print(f"feasible methods: {sorted(k for k, v in ranking['feasible'].items() if v)}")
    print(f"recommended: {ranking['recommendation']}")

    chosen = client.put(
        f"/sessions/{sid}/method", json={"method_id": ranking["recommendation"]}
    ).json()
    print(f"chose {chosen['chosen']} (diverged from recommendation: {chosen['diverged']})")

    effect = client.post(f"/sessions/{sid}/effect", json={}).json()
    est = effect["effect"]
    print(
        f"\ndoubly robust estimate: {est['estimate']:.3f} "
        f"CI ({est['ci_low']:.3f}, {est['ci_high']:.3f})"
    )

    print("\nsensitivity on a coarse grid (async job):")
    cfg = {
        "es_t_range": [-0.4, 0.4],
        "es_t_step": 0.2,
        "rho_y_range": [0.0, 0.4],
        "rho_y_step": 0.2,
        "replications": 5,
        "seed": 11,
    }
    client.post(f"/sessions/{sid}/sensitivity", json={"config": cfg})
    wait_for(client, f"/sessions/{sid}/sensitivity/status", "sensitivity")
    result = client.get(f"/sessions/{sid}/sensitivity/result").json()
    print(f"very sensitive: {result['analysis']['very_sensitive']}")

    report = client.get(f"/sessions/{sid}/report", headers={"Accept": "text/markdown"})
    print(f"\nmarkdown report: {len(report.text)} chars, first line: {report.text.splitlines()[0]}")
    weights_csv = client.get(f"/sessions/{sid}/export/weights.csv")
    print(f"weights export header: {weights_csv.text.splitlines()[0][:60]}...")
    balance_csv = client.get(f"/sessions/{sid}/export/balance.csv")
    print(f"balance export rows: {len(balance_csv.text.splitlines()) - 1}")

    print(f"\nsession log persisted under {store}; a new process can resume it")


if __name__ == "__main__":
    main()
