import { z } from "zod";

/** Wizard step keys as the service reports them, in workflow order. */
export const STEP_KEYS = [
  "data",
  "roles",
  "estimand",
  "weights",
  "method",
  "effect",
  "sensitivity",
] as const;

export type StepKey = (typeof STEP_KEYS)[number];

export const StepsDoneSchema = z.object({
  data: z.boolean(),
  roles: z.boolean(),
  estimand: z.boolean(),
  weights: z.boolean(),
  method: z.boolean(),
  effect: z.boolean(),
  sensitivity: z.boolean(),
});
export type StepsDone = z.infer<typeof StepsDoneSchema>;

export const SessionSummarySchema = z.object({
  id: z.string(),
  filename: z.string().nullable(),
  created_at: z.string().nullable(),
  updated_at: z.string().nullable(),
  steps_done: StepsDoneSchema,
  estimand: z.string().nullable(),
  chosen_method: z.string().nullable(),
  recommendation: z.string().nullable(),
  trim_events: z.number(),
  revision: z.number(),
  n_rows: z.number().nullable(),
  n_treated: z.number().optional(),
  n_control: z.number().optional(),
  n_dropped_na: z.number().optional(),
  confounders: z.array(z.string()).optional(),
  columns: z.array(z.string()).nullable().optional(),
});
export type SessionSummary = z.infer<typeof SessionSummarySchema>;

const LevelSchema = z.union([z.string(), z.number()]);

export const OverlapEntrySchema = z.object({
  covariate: z.string(),
  kind: z.enum(["continuous", "binary", "categorical"]),
  bin_edges: z.array(z.number()).nullable(),
  levels: z.array(LevelSchema).nullable(),
  treated_counts: z.array(z.number()),
  control_counts: z.array(z.number()),
  treated_min: z.number().nullable(),
  treated_max: z.number().nullable(),
  control_min: z.number().nullable(),
  control_max: z.number().nullable(),
  flag: z.boolean(),
  detail: z.array(z.string()),
});
export type OverlapEntry = z.infer<typeof OverlapEntrySchema>;

export const OverlapPayloadSchema = z.object({
  entries: z.array(OverlapEntrySchema),
});
export type OverlapPayload = z.infer<typeof OverlapPayloadSchema>;

export const TrimRuleSchema = z.object({
  covariate: z.string(),
  tail: z.enum(["lower", "upper", "both"]),
  lower: z.number().nullable().optional(),
  upper: z.number().nullable().optional(),
  quantile: z.boolean(),
});
export type TrimRule = z.infer<typeof TrimRuleSchema>;

export const RemovedOverlayEntrySchema = z.object({
  covariate: z.string(),
  kind: z.enum(["continuous", "binary", "categorical"]),
  bin_edges: z.array(z.number()).nullable(),
  levels: z.array(LevelSchema).nullable(),
  removed_treated: z.array(z.number()),
  removed_control: z.array(z.number()),
});
export type RemovedOverlayEntry = z.infer<typeof RemovedOverlayEntrySchema>;

export const TrimResponseSchema = z.object({
  dry_run: z.boolean(),
  n_removed: z.number(),
  n_removed_treated: z.number(),
  n_removed_control: z.number(),
  n_remaining: z.number(),
  per_rule: z.record(z.string(), z.number()),
  resolved_rules: z.array(TrimRuleSchema),
  removed_overlay: z.array(RemovedOverlayEntrySchema).optional(),
});
export type TrimResponse = z.infer<typeof TrimResponseSchema>;

export const JobStatusSchema = z.object({
  state: z.enum(["idle", "running", "done", "cancelled", "failed", "cancelling"]),
  progress: z.object({ done: z.number(), total: z.number() }).optional(),
  error: z.string().optional(),
});
export type JobStatus = z.infer<typeof JobStatusSchema>;

export const BalanceRowSchema = z.object({
  covariate: z.string(),
  smd_unweighted: z.number(),
  ks_unweighted: z.number(),
  smd: z.record(z.string(), z.number()),
  ks: z.record(z.string(), z.number()),
  degenerate: z.boolean(),
});
export type BalanceRow = z.infer<typeof BalanceRowSchema>;

export const BalanceSummarySchema = z.object({
  method_id: z.string(),
  mean_smd: z.number(),
  max_smd: z.number(),
  mean_ks: z.number(),
  max_ks: z.number(),
  ess: z.number(),
  ess_pct: z.number(),
});
export type BalanceSummary = z.infer<typeof BalanceSummarySchema>;

export const MethodRankingSchema = z.object({
  ranking: z.array(z.string()),
  feasible: z.record(z.string(), z.boolean()),
  recommendation: z.string().nullable(),
  message: z.string().nullable(),
});
export type MethodRanking = z.infer<typeof MethodRankingSchema>;

export const BalancePayloadSchema = z.object({
  rows: z.array(BalanceRowSchema),
  summaries: z.record(z.string(), BalanceSummarySchema),
  ranking: MethodRankingSchema,
  failures: z.record(z.string(), z.string()),
});
export type BalancePayload = z.infer<typeof BalancePayloadSchema>;

export const MethodResponseSchema = z.object({
  chosen: z.string(),
  recommendation: z.string().nullable(),
  diverged: z.boolean(),
});
export type MethodResponse = z.infer<typeof MethodResponseSchema>;

export const EffectEstimateSchema = z.object({
  estimate: z.number(),
  se: z.number(),
  ci_low: z.number(),
  ci_high: z.number(),
  p_value: z.number(),
  estimand: z.string().nullable(),
  method_id: z.string(),
  n: z.number(),
  ess: z.number(),
  model: z.string(),
});
export type EffectEstimate = z.infer<typeof EffectEstimateSchema>;

export const EffectResponseSchema = z.object({
  effect: EffectEstimateSchema,
  balance_stamp: z.string().nullable(),
  model: z.string(),
  covariate_subset: z.array(z.string()).nullable(),
});
export type EffectResponse = z.infer<typeof EffectResponseSchema>;

const CellMatrix = z.array(z.array(z.number().nullable()));

export const SensitivityGridSchema = z.object({
  es_t_values: z.array(z.number()),
  rho_y_values: z.array(z.number()),
  effect: CellMatrix,
  p: CellMatrix,
  infeasible: z.array(z.array(z.boolean())),
  original_estimate: z.number(),
  original_p: z.number(),
});
export type SensitivityGrid = z.infer<typeof SensitivityGridSchema>;

const PointSchema = z.tuple([z.number(), z.number()]);
const SegmentSchema = z.tuple([PointSchema, PointSchema]);

export const IsolineSchema = z.object({
  level: z.number(),
  segments: z.array(SegmentSchema),
});
export type Isoline = z.infer<typeof IsolineSchema>;

export const ObservedPointSchema = z.object({
  name: z.string(),
  smd: z.number(),
  rho: z.number(),
});
export type ObservedPoint = z.infer<typeof ObservedPointSchema>;

export const SensitivityAnalysisSchema = z.object({
  grid: SensitivityGridSchema,
  points: z.array(ObservedPointSchema),
  effect_isolines: z.array(IsolineSchema),
  p_isolines: z.array(IsolineSchema),
  very_sensitive: z.boolean(),
  very_sensitive_rule: z.string(),
  procedure: z.string(),
});
export type SensitivityAnalysis = z.infer<typeof SensitivityAnalysisSchema>;

export const SensitivityResultSchema = z.object({
  config: z.record(z.string(), z.unknown()),
  analysis: SensitivityAnalysisSchema,
});
export type SensitivityResult = z.infer<typeof SensitivityResultSchema>;

/** Report JSON: section presence is the contract; section bodies vary. */
export const ReportSchema = z
  .object({
    session: z.record(z.string(), z.unknown()),
    configuration: z.record(z.string(), z.unknown()),
    overlap: z.unknown(),
    trimming: z.unknown(),
    balance: z.unknown(),
    method: z.unknown(),
    effect: z.unknown(),
    sensitivity: z.unknown(),
    notes: z.unknown(),
  })
  .loose();
export type Report = z.infer<typeof ReportSchema>;

export const StepOrderBodySchema = z.object({
  detail: z.string(),
  missing: z.string(),
});

export const ValidationBodySchema = z.object({
  detail: z.array(
    z.object({
      loc: z.array(z.union([z.string(), z.number()])),
      msg: z.string(),
      type: z.string(),
    }),
  ),
});
