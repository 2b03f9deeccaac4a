"""Capture live service payloads as JSON fixtures for the UI test suite.

Drives one full session against the real HTTP app (in-process test client)
and writes each response the pages consume to ``frontend/tests/fixtures/``.
The dataset has a deliberately correlated covariate pair so the trim
dry-run overlay shows removal mass appearing on a covariate that was not
trimmed directly.

Run from the repository root after installing the package:

    python frontend/scripts/capture_fixtures.py
"""

import json
import tempfile
import time
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from balancekit import EstimatorConfig, GbmHyperparameters
from balancekit.service import create_app

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

ROLES = {
    "t": "treatment",
    "y": "outcome",
    "x1": "continuous_confounder",
    "x2": "continuous_confounder",
    "x3": "binary_confounder",
    "g": "categorical_confounder",
}


def make_csv(seed: int = 7, n: int = 400) -> bytes:
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    x2 = 0.7 * x1 + np.sqrt(1.0 - 0.49) * rng.normal(size=n)
    x3 = (rng.uniform(size=n) < 0.4).astype(int)
    g = rng.choice(["a", "b", "c"], size=n)
    eta = 0.8 * x1 - 0.5 * x2 + 0.4 * x3 + 0.3 * (g == "b")
    t = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
    y = 1.2 * x1 + 0.8 * x2 + 0.5 * x3 + 0.25 * t + rng.normal(size=n)
    rows = ["t,y,x1,x2,x3,g"]
    for i in range(n):
        rows.append(f"{t[i]},{y[i]:.6f},{x1[i]:.6f},{x2[i]:.6f},{x3[i]},{g[i]}")
    return "\n".join(rows).encode()


def save(name: str, payload) -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    path = OUT / name
    if name.endswith(".json"):
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        path.write_text(payload)
    print(f"wrote {path.relative_to(OUT.parent.parent)}")


def wait(client: TestClient, url: str) -> None:
    for _ in range(600):
        status = client.get(url).json()
        if status["state"] == "done":
            return
        if status["state"] not in {"running", "cancelling"}:
            raise RuntimeError(f"job ended in state {status['state']}: {status}")
        time.sleep(0.2)
    raise RuntimeError("job did not finish in time")


def main() -> None:
    client = TestClient(create_app(Path(tempfile.mkdtemp())))

    r = client.post("/sessions", files={"file": ("demo.csv", make_csv(), "text/csv")})
    r.raise_for_status()
    sid = r.json()["id"]
    save("created.json", r.json())

    client.put(f"/sessions/{sid}/roles", json={"roles": ROLES, "treated_level": "1"}).raise_for_status()
    r = client.put(f"/sessions/{sid}/estimand", json={"estimand": "ATE"})
    r.raise_for_status()
    save("summary.json", r.json())

    r = client.get(f"/sessions/{sid}/overlap", params={"bins": 10})
    r.raise_for_status()
    save("overlap.json", r.json())

    rule = {"covariate": "x2", "tail": "upper", "upper": 0.88, "quantile": True}
    r = client.post(
        f"/sessions/{sid}/trim",
        json={"rules": [rule], "dry_run": True, "overlay_bins": 10},
    )
    r.raise_for_status()
    save("trim_dryrun.json", r.json())

    config = EstimatorConfig(seed=0, gbm=GbmHyperparameters(max_trees=120)).to_dict()
    r = client.post(f"/sessions/{sid}/weights", json={"config": config})
    assert r.status_code == 202, r.text
    wait(client, f"/sessions/{sid}/weights/status")

    r = client.get(f"/sessions/{sid}/balance")
    r.raise_for_status()
    balance = r.json()
    save("balance.json", balance)

    method = balance["ranking"]["recommendation"] or balance["ranking"]["ranking"][0]
    r = client.put(f"/sessions/{sid}/method", json={"method_id": method})
    r.raise_for_status()
    save("method.json", r.json())

    r = client.post(f"/sessions/{sid}/effect", json={"model": "DoublyRobust"})
    r.raise_for_status()
    save("effect.json", r.json())

    sens_config = {
        "es_t_range": [-0.45, 0.45],
        "es_t_step": 0.15,
        "rho_y_range": [0.0, 0.45],
        "rho_y_step": 0.15,
        "replications": 5,
        "seed": 0,
    }
    r = client.post(f"/sessions/{sid}/sensitivity", json={"config": sens_config})
    assert r.status_code == 202, r.text
    wait(client, f"/sessions/{sid}/sensitivity/status")

    r = client.get(f"/sessions/{sid}/sensitivity/result")
    r.raise_for_status()
    save("sensitivity.json", r.json())

    r = client.get(f"/sessions/{sid}/report")
    r.raise_for_status()
    save("report.json", r.json())

    r = client.get(f"/sessions/{sid}/report", headers={"Accept": "text/markdown"})
    r.raise_for_status()
    save("report.md", r.text)

    r = client.get(f"/sessions/{sid}/summary")
    r.raise_for_status()
    save("summary_final.json", r.json())


if __name__ == "__main__":
    main()
