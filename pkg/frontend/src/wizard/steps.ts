import type { SessionSummary, StepKey } from "../api/types";

/** UI wizard pages, in the order the analyst walks them. */
export const UI_STEP_ORDER = [
  "data",
  "setup",
  "outliers",
  "balance",
  "outcome",
  "report",
] as const;

export type UiStep = (typeof UI_STEP_ORDER)[number];

export const UI_STEP_LABELS: Record<UiStep, string> = {
  data: "Data",
  setup: "Model setup",
  outliers: "Outliers",
  balance: "Balance",
  outcome: "Outcome",
  report: "Report",
};

/**
 * The service step that must be complete before a page can be entered.
 * Mirrors the order the service itself enforces, so a page the UI unlocks
 * never draws a step-order conflict for its reads.
 */
export const ENTRY_REQUIREMENT: Record<UiStep, StepKey | null> = {
  data: null,
  setup: "data",
  outliers: "roles",
  balance: "estimand",
  outcome: "method",
  report: "effect",
};

export function stepUnlocked(step: UiStep, summary: SessionSummary | null): boolean {
  const requirement = ENTRY_REQUIREMENT[step];
  if (requirement === null) return true;
  if (summary === null) return false;
  return summary.steps_done[requirement];
}

/** The furthest unlocked page: where a restored session should resume. */
export function furthestUnlockedStep(summary: SessionSummary | null): UiStep {
  let last: UiStep = "data";
  for (const step of UI_STEP_ORDER) {
    if (stepUnlocked(step, summary)) last = step;
  }
  return last;
}

/** UI page that completes a given service step, for routing 409 conflicts. */
export function stepForRequirement(missing: string): UiStep {
  const map: Record<string, UiStep> = {
    data: "data",
    roles: "setup",
    estimand: "setup",
    weights: "balance",
    method: "balance",
    effect: "outcome",
    sensitivity: "report",
  };
  return map[missing] ?? "data";
}
