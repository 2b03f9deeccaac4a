"""Step 1-2 walkthrough: load a CSV, assign roles, inspect overlap, trim tails.

The demo dataset has four confounders (two continuous, one binary, one
categorical) that drive both treatment assignment and the outcome, so the
raw groups differ visibly. We look at per-group summaries, check where the
supports disagree, preview a quantile trim without committing it, and then
apply it.
"""

from pathlib import Path

import numpy as np

from balancekit import (
    Tail,
    TrimRule,
    apply_trim,
    assign_roles,
    load_csv,
    overlap_report,
    summarize,
)

DATA = Path(__file__).parent / "data" / "synthetic_mixed.csv"
ROLES = {
    "t": "treatment",
    "y": "outcome",
    "x1": "continuous_confounder",
    "x2": "continuous_confounder",
    "x3": "binary_confounder",
    "g": "categorical_confounder",
}


def main():
    raw = load_csv(DATA)
    print(f"loaded {raw.n_rows} rows, columns: {', '.join(raw.column_names())}")

    d = assign_roles(raw, ROLES, treated_level="1")
    n_control, n_treated = d.group_sizes()
    print(f"roles assigned: {n_treated} treated vs {n_control} control\n")

    print("per-group means (treated vs control):")
    stats = {(s.covariate, s.group): s for s in summarize(d)}
    names = sorted({c for c, _ in stats})
    for name in names:
        tr, co = stats[(name, "treated")], stats[(name, "control")]
        print(f"  {name:8s} {tr.mean:8.3f} vs {co.mean:8.3f}")

    print("\noverlap diagnostics:")
    for entry in overlap_report(d):
        status = "FLAG" if entry.flag else "ok"
        print(f"  {entry.covariate:8s} [{status}]")
        for detail in entry.detail:
            print(f"    - {detail}")

    # preview first: how many rows would a 99th-percentile cap on x2 remove?
    rule = TrimRule("x2", Tail.UPPER, upper=0.99, quantile=True)
    preview = apply_trim(d, [rule])
    print(f"\ntrim preview: capping x2 at its 99th percentile removes "
          f"{len(preview.removed_row_ids)} rows "
          f"(resolved threshold {preview.resolved_rules[0].upper:.3f})")

    trimmed = preview.dataset
    print(f"after trim: {trimmed.n_rows} rows remain")

    # trimming is conservative: it never empties a treatment group
    aggressive = TrimRule("x1", Tail.BOTH, lower=0.5, upper=0.500001)
    try:
        apply_trim(d, [aggressive])
    except ValueError as e:
        print(f"\nover-aggressive trim rejected: {e}")

    x2 = trimmed.column("x2").values
    print(f"\nx2 range after trim: [{np.min(x2):.3f}, {np.max(x2):.3f}]")


if __name__ == "__main__":
    main()
