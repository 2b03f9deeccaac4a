/**
 * Canonical number rendering shared by the pages and the fidelity tests.
 * Every rendered figure also carries its raw payload value in a
 * `data-value` attribute, so a test can check the displayed text against
 * the exact field without re-deriving the formatting.
 */
export function fmt(value: number | null | undefined, digits = 3): string {
  if (value === null || value === undefined || !Number.isFinite(value)) return "–";
  return value.toFixed(digits);
}

export function fmtInt(value: number | null | undefined): string {
  if (value === null || value === undefined || !Number.isFinite(value)) return "–";
  return String(Math.trunc(value));
}

export function fmtPct(value: number | null | undefined, digits = 1): string {
  if (value === null || value === undefined || !Number.isFinite(value)) return "–";
  return `${value.toFixed(digits)}%`;
}
