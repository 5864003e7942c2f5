/**
 * Payload contracts for the screening service API.
 *
 * The service versions every document it emits. This client pins one
 * schema version and refuses to render anything else: the engine and
 * the dashboard evolve independently, and silently rendering a newer
 * document could drop or misread fields.
 */

export const PINNED_SCHEMA_VERSION = 1;

export type Zone = "safe" | "warning" | "emergency";

export interface Policy {
  t_star: number;
  warning: number;
  emergency: number;
}

export interface GridBus {
  id: number;
  inertia: number;
  damping: number;
  injection: number;
  kind: string;
}

export interface GridBranch {
  index: number;
  from_bus: number;
  to_bus: number;
  susceptance: number;
  limit: number;
  transformer: boolean;
}

export interface WhatIfBounds {
  tau: [number, number];
  sigma: [number, number];
  gamma: [number, number];
  n: [number, number];
}

export interface GridDoc {
  schema_version: number;
  n_buses: number;
  n_branches: number;
  reference: number;
  monitored: number[];
  buses: GridBus[];
  branches: GridBranch[];
  meta: Record<string, unknown>;
  whatif_bounds: WhatIfBounds;
}

export interface ReportElement {
  branch: number;
  from_bus: number;
  to_bus: number;
  transformer: boolean;
  q_any: number;
  q_max: number;
  zone: Zone;
}

export interface FaultedEntry {
  branch: number;
  from_bus: number;
  to_bus: number;
  frequency: number;
  overload_seconds: number;
}

export interface VulnerableEntry {
  branch: number;
  from_bus: number;
  to_bus: number;
  transformer: boolean;
  recurrence: number;
  q_any: number;
  zone: Zone;
}

export interface ReportDoc {
  schema_version: number;
  policy: Policy;
  grid: Record<string, unknown>;
  estimate: Record<string, unknown>;
  monitored: number[];
  matrix: {
    q: number[][];
    stderr: number[][];
  };
  elements: ReportElement[];
  curves: {
    bin_width: number;
    n_bins: number;
    ess: number[][];
    q: (number | null)[][];
  };
  rankings: {
    faulted: FaultedEntry[];
    vulnerable: VulnerableEntry[];
  };
  metadata: Record<string, unknown>;
}

export interface CurveDoc {
  schema_version: number;
  branch: number;
  from_bus: number;
  to_bus: number;
  bin_width: number;
  n_bins: number;
  q: (number | null)[];
  ess: number[];
  min_ess: number;
  peak: number;
  zone: Zone;
  bands: {
    warning: number;
    emergency: number;
  };
  t_star: number;
  affected: { branch: number; q: number }[];
}

export interface WhatIfRequest {
  faulted_branch: number;
  tau: number;
  sigma: number;
  gamma: number;
  n: number;
  seed: number;
}

export interface EstimateDoc {
  estimate: number;
  stderr: number;
  ess: number;
  n_samples: number;
  n_evaluations: number;
  gamma: number;
  method: string;
}

export interface TrajectorySummary {
  max_ratio: number | null;
  global_seconds: number;
  n_failed: number;
  top_elements: {
    branch: number;
    from_bus: number;
    to_bus: number;
    seconds: number;
  }[];
}

export interface WhatIfResult {
  schema_version: number;
  request: WhatIfRequest;
  estimate: EstimateDoc;
  zone: Zone;
  trajectory: TrajectorySummary;
}

export type JobStatus = "queued" | "running" | "done" | "failed";

export interface ApiErrorPayload {
  code: string;
  detail: unknown;
}

export interface JobDoc {
  schema_version: number;
  job: {
    id: string;
    status: JobStatus;
    poll?: string;
    result?: WhatIfResult;
    error?: ApiErrorPayload;
  };
}

export class SchemaMismatchError extends Error {
  readonly found: number;

  constructor(found: number) {
    super(
      `document declares schema version ${found}; ` +
        `this dashboard pins version ${PINNED_SCHEMA_VERSION}`,
    );
    this.name = "SchemaMismatchError";
    this.found = found;
  }
}

/** Gate every document behind the pinned schema version. */
export function pinVersion<T extends { schema_version: number }>(doc: T): T {
  if (doc.schema_version !== PINNED_SCHEMA_VERSION) {
    throw new SchemaMismatchError(doc.schema_version);
  }
  return doc;
}
