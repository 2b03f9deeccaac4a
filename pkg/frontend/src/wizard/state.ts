import { ApiClient, ApiError, type TrimRequestRule } from "../api/client";
import type {
  BalancePayload,
  EffectResponse,
  JobStatus,
  OverlapPayload,
  Report,
  SensitivityResult,
  SessionSummary,
  TrimResponse,
} from "../api/types";
import { furthestUnlockedStep, stepUnlocked, UI_STEP_LABELS, type UiStep, ENTRY_REQUIREMENT } from "./steps";

export interface PendingBound {
  lower: number | null;
  upper: number | null;
}

interface Stamped<T> {
  revision: number;
  value: T;
}

export interface OverrideRequest {
  methodId: string;
  recommendation: string | null;
}

export interface WizardSnapshot {
  step: UiStep;
  summary: SessionSummary | null;
  overlap: OverlapPayload | null;
  pendingTrims: Record<string, PendingBound>;
  trimPreview: TrimResponse | null;
  balance: BalancePayload | null;
  pendingOverride: OverrideRequest | null;
  effect: EffectResponse | null;
  sensitivity: SensitivityResult | null;
  report: Report | null;
  reportMarkdown: string | null;
  weightsJob: JobStatus | null;
  sensitivityJob: JobStatus | null;
  busy: boolean;
  error: string | null;
  blockedBy: string | null;
}

export interface WizardOptions {
  /** Poll interval for background jobs, injectable for tests. */
  sleep?: (ms: number) => Promise<void>;
  pollMs?: number;
}

const realSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

/**
 * Client-side state for the six-page wizard.
 *
 * All numbers shown by the pages live in the cached server payloads here;
 * the controller never derives statistics of its own. Caches are stamped
 * with the session revision they were fetched under and dropped whenever
 * the server reports a newer revision, so a page can never keep rendering
 * artifacts the server has discarded.
 */
export class WizardController {
  private readonly client: ApiClient;
  private readonly sleep: (ms: number) => Promise<void>;
  private readonly pollMs: number;
  private listeners = new Set<() => void>();

  private sessionId: string | null = null;
  private summary: SessionSummary | null = null;
  private step: UiStep = "data";
  private overlap: Stamped<OverlapPayload> | null = null;
  private pendingTrims: Record<string, PendingBound> = {};
  private trimPreview: Stamped<TrimResponse> | null = null;
  private balance: Stamped<BalancePayload> | null = null;
  private pendingOverride: OverrideRequest | null = null;
  private effect: Stamped<EffectResponse> | null = null;
  private sensitivity: Stamped<SensitivityResult> | null = null;
  private report: Stamped<Report> | null = null;
  private reportMarkdown: Stamped<string> | null = null;
  private weightsJob: JobStatus | null = null;
  private sensitivityJob: JobStatus | null = null;
  private busy = false;
  private error: string | null = null;
  private blockedBy: string | null = null;
  private snapshotCache: WizardSnapshot | null = null;

  constructor(client: ApiClient, options: WizardOptions = {}) {
    this.client = client;
    this.sleep = options.sleep ?? realSleep;
    this.pollMs = options.pollMs ?? 500;
  }

  /** Rebuild state for an existing session, resuming at the furthest page. */
  static async restore(
    client: ApiClient,
    sessionId: string,
    options: WizardOptions = {},
  ): Promise<WizardController> {
    const controller = new WizardController(client, options);
    controller.sessionId = sessionId;
    controller.summary = await client.summary(sessionId);
    controller.step = furthestUnlockedStep(controller.summary);
    return controller;
  }

  subscribe(listener: () => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  getSnapshot(): WizardSnapshot {
    if (this.snapshotCache === null) {
      this.snapshotCache = {
        step: this.step,
        summary: this.summary,
        overlap: this.overlap?.value ?? null,
        pendingTrims: this.pendingTrims,
        trimPreview: this.trimPreview?.value ?? null,
        balance: this.balance?.value ?? null,
        pendingOverride: this.pendingOverride,
        effect: this.effect?.value ?? null,
        sensitivity: this.sensitivity?.value ?? null,
        report: this.report?.value ?? null,
        reportMarkdown: this.reportMarkdown?.value ?? null,
        weightsJob: this.weightsJob,
        sensitivityJob: this.sensitivityJob,
        busy: this.busy,
        error: this.error,
        blockedBy: this.blockedBy,
      };
    }
    return this.snapshotCache;
  }

  private emit() {
    this.snapshotCache = null;
    for (const listener of this.listeners) listener();
  }

  private get revision(): number {
    return this.summary?.revision ?? 0;
  }

  private requireSession(): string {
    if (this.sessionId === null) throw new Error("no session has been created yet");
    return this.sessionId;
  }

  /** Drop any cached artifact fetched under an older session revision. */
  private dropStale() {
    const fresh = this.revision;
    const stale = <T>(entry: Stamped<T> | null) =>
      entry !== null && entry.revision !== fresh ? null : entry;
    this.overlap = stale(this.overlap);
    this.trimPreview = stale(this.trimPreview);
    this.balance = stale(this.balance);
    this.effect = stale(this.effect);
    this.sensitivity = stale(this.sensitivity);
    this.report = stale(this.report);
    this.reportMarkdown = stale(this.reportMarkdown);
  }

  private record(error: unknown) {
    if (error instanceof ApiError) {
      this.error = error.message;
      this.blockedBy = error.missing;
    } else {
      this.error = error instanceof Error ? error.message : String(error);
      this.blockedBy = null;
    }
  }

  /** Run one action: clears the error channel, tracks busy, records failures. */
  private async act<T>(work: () => Promise<T>): Promise<T | null> {
    this.busy = true;
    this.error = null;
    this.blockedBy = null;
    this.emit();
    try {
      return await work();
    } catch (error) {
      this.record(error);
      return null;
    } finally {
      this.busy = false;
      this.emit();
    }
  }

  private async refreshSummary(): Promise<void> {
    this.summary = await this.client.summary(this.requireSession());
    this.dropStale();
  }

  /**
   * Enter a page. Pages unlock strictly in workflow order; a locked page is
   * refused locally with a message naming the unfinished step, matching what
   * the service would answer. Entering re-reads the summary first, so caches
   * from an older revision never survive a transition.
   */
  async goTo(step: UiStep): Promise<boolean> {
    const moved = await this.act(async () => {
      if (this.sessionId !== null) await this.refreshSummary();
      if (!stepUnlocked(step, this.summary)) {
        const requirement = ENTRY_REQUIREMENT[step];
        this.error = `complete ${requirement ?? "the previous step"} before ${UI_STEP_LABELS[step]}`;
        this.blockedBy = requirement;
        return false;
      }
      this.step = step;
      return true;
    });
    return moved ?? false;
  }

  async upload(csv: Blob | string, filename: string): Promise<boolean> {
    const done = await this.act(async () => {
      const summary = await this.client.createSession(csv, filename);
      this.sessionId = summary.id;
      this.summary = summary;
      this.step = "setup";
      return true;
    });
    return done ?? false;
  }

  async assignRoles(
    roles: Record<string, string>,
    treatedLevel?: string | number | null,
  ): Promise<boolean> {
    const done = await this.act(async () => {
      this.summary = await this.client.setRoles(this.requireSession(), roles, treatedLevel);
      this.dropStale();
      return true;
    });
    return done ?? false;
  }

  async pickEstimand(estimand: string): Promise<boolean> {
    const done = await this.act(async () => {
      this.summary = await this.client.setEstimand(this.requireSession(), estimand);
      this.dropStale();
      return true;
    });
    return done ?? false;
  }

  async loadOverlap(bins?: number): Promise<boolean> {
    const done = await this.act(async () => {
      const payload = await this.client.overlap(this.requireSession(), bins);
      this.overlap = { revision: this.revision, value: payload };
      return true;
    });
    return done ?? false;
  }

  /** Record a what-if bound for one covariate; null ends leave that side open. */
  setPendingBound(covariate: string, bound: PendingBound) {
    if (bound.lower === null && bound.upper === null) {
      const { [covariate]: _dropped, ...rest } = this.pendingTrims;
      this.pendingTrims = rest;
    } else {
      this.pendingTrims = { ...this.pendingTrims, [covariate]: bound };
    }
    this.emit();
  }

  clearPendingBounds() {
    this.pendingTrims = {};
    this.trimPreview = null;
    this.emit();
  }

  private pendingRules(): TrimRequestRule[] {
    return Object.entries(this.pendingTrims).map(([covariate, bound]) => ({
      covariate,
      tail: bound.lower !== null && bound.upper !== null
        ? "both"
        : bound.lower !== null
          ? "lower"
          : "upper",
      lower: bound.lower,
      upper: bound.upper,
      quantile: false,
    }));
  }

  /** Dry-run the pending bounds; the preview carries per-covariate overlays. */
  async previewPendingTrims(overlayBins = 10): Promise<boolean> {
    const rules = this.pendingRules();
    if (rules.length === 0) {
      this.trimPreview = null;
      this.emit();
      return true;
    }
    const done = await this.act(async () => {
      const preview = await this.client.trim(this.requireSession(), rules, {
        dryRun: true,
        overlayBins,
      });
      this.trimPreview = { revision: this.revision, value: preview };
      return true;
    });
    return done ?? false;
  }

  async commitPendingTrims(): Promise<boolean> {
    const rules = this.pendingRules();
    if (rules.length === 0) return false;
    const done = await this.act(async () => {
      await this.client.trim(this.requireSession(), rules, { dryRun: false });
      this.pendingTrims = {};
      this.trimPreview = null;
      await this.refreshSummary();
      const payload = await this.client.overlap(this.requireSession());
      this.overlap = { revision: this.revision, value: payload };
      return true;
    });
    return done ?? false;
  }

  private async pollJob(kind: "weights" | "sensitivity"): Promise<JobStatus> {
    const id = this.requireSession();
    for (;;) {
      const status =
        kind === "weights"
          ? await this.client.weightsStatus(id)
          : await this.client.sensitivityStatus(id);
      if (kind === "weights") this.weightsJob = status;
      else this.sensitivityJob = status;
      this.emit();
      if (status.state !== "running" && status.state !== "cancelling") return status;
      await this.sleep(this.pollMs);
    }
  }

  async runWeights(config: Record<string, unknown> = {}): Promise<boolean> {
    const done = await this.act(async () => {
      this.weightsJob = await this.client.startWeights(this.requireSession(), config);
      this.emit();
      const finished = await this.pollJob("weights");
      if (finished.state !== "done") {
        this.error = finished.error ?? `weights job ${finished.state}`;
        return false;
      }
      await this.refreshSummary();
      const payload = await this.client.balance(this.requireSession());
      this.balance = { revision: this.revision, value: payload };
      return true;
    });
    return done ?? false;
  }

  async loadBalance(): Promise<boolean> {
    const done = await this.act(async () => {
      const payload = await this.client.balance(this.requireSession());
      this.balance = { revision: this.revision, value: payload };
      return true;
    });
    return done ?? false;
  }

  /**
   * Choose the weighting method. Picking anything other than the server's
   * recommendation parks the choice in `pendingOverride` until the analyst
   * explicitly confirms; the confirmation prompt names the recommendation.
   */
  async pickMethod(methodId: string, confirmedOverride = false): Promise<boolean> {
    const recommendation = this.balance?.value.ranking.recommendation ?? null;
    if (recommendation !== null && methodId !== recommendation && !confirmedOverride) {
      this.pendingOverride = { methodId, recommendation };
      this.emit();
      return false;
    }
    const done = await this.act(async () => {
      await this.client.chooseMethod(this.requireSession(), methodId);
      this.pendingOverride = null;
      await this.refreshSummary();
      return true;
    });
    return done ?? false;
  }

  async confirmOverride(): Promise<boolean> {
    const pending = this.pendingOverride;
    if (pending === null) return false;
    return this.pickMethod(pending.methodId, true);
  }

  cancelOverride() {
    this.pendingOverride = null;
    this.emit();
  }

  async runEffect(model = "DoublyRobust", covariateSubset?: string[]): Promise<boolean> {
    const done = await this.act(async () => {
      const response = await this.client.runEffect(this.requireSession(), model, covariateSubset);
      await this.refreshSummary();
      this.effect = { revision: this.revision, value: response };
      return true;
    });
    return done ?? false;
  }

  async runSensitivity(config: Record<string, unknown> = {}): Promise<boolean> {
    const done = await this.act(async () => {
      this.sensitivityJob = await this.client.startSensitivity(this.requireSession(), config);
      this.emit();
      const finished = await this.pollJob("sensitivity");
      if (finished.state !== "done") {
        this.error = finished.error ?? `sensitivity job ${finished.state}`;
        return false;
      }
      await this.refreshSummary();
      const result = await this.client.sensitivityResult(this.requireSession());
      this.sensitivity = { revision: this.revision, value: result };
      return true;
    });
    return done ?? false;
  }

  async loadSensitivityResult(): Promise<boolean> {
    const done = await this.act(async () => {
      const result = await this.client.sensitivityResult(this.requireSession());
      this.sensitivity = { revision: this.revision, value: result };
      return true;
    });
    return done ?? false;
  }

  async loadReport(): Promise<boolean> {
    const done = await this.act(async () => {
      const [doc, markdown] = await Promise.all([
        this.client.report(this.requireSession()),
        this.client.reportMarkdown(this.requireSession()),
      ]);
      this.report = { revision: this.revision, value: doc };
      this.reportMarkdown = { revision: this.revision, value: markdown };
      return true;
    });
    return done ?? false;
  }

  exportUrl(artifact: "weights.csv" | "balance.csv"): string {
    return this.client.exportUrl(this.requireSession(), artifact);
  }
}
