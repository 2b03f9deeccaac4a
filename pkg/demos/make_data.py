"""Regenerate the bundled demo dataset (demos/data/synthetic_mixed.csv).

The file is committed so the demos and the end-to-end tests run without a
generation step; rerun this script only to change the design. Seeded, so
the output is reproducible.
"""

from pathlib import Path

from balancekit import confounded_linear

HERE = Path(__file__).parent
OUT = HERE / "data" / "synthetic_mixed.csv"


def main():
    data = confounded_linear(seed=42, n=1000, tau=2.0, noise=1.0)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    data.write_csv(OUT)
    print(f"wrote {OUT} ({data.n_rows()} rows, true effect {data.true_effect})")


if __name__ == "__main__":
    main()
