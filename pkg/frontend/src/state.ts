// Session state machine, kept free of DOM concerns so the cancel/retry
// semantics are testable headlessly.  One inference request may be in
// flight at a time; a newer submission aborts the older one.  A failed
// request never touches the draft.

import type { Api } from "./api.js";
import type { Confirmation, InferenceRequest, InferenceResponse, LabEntry } from "./types.js";

export interface DraftRow extends LabEntry {
  fromFollowup?: string; // group that suggested this row, if any
}

export interface Draft {
  age: number | null;
  gender: string;
  rows: DraftRow[];
  topN: number;
}

export interface SessionState {
  draft: Draft;
  view: InferenceResponse | null;
  confirmations: Confirmation[] | null;
  expandedGroup: string | null;
  error: string | null;
  pending: boolean;
}

function isAbort(error: unknown): boolean {
  return error instanceof DOMException
    ? error.name === "AbortError"
    : error instanceof Error && error.name === "AbortError";
}

export class ConsoleSession {
  state: SessionState = {
    draft: { age: null, gender: "F", rows: [], topN: 5 },
    view: null,
    confirmations: null,
    expandedGroup: null,
    error: null,
    pending: false,
  };

  private inflight: AbortController | null = null;

  constructor(
    private readonly api: Api,
    private readonly onChange: (state: SessionState) => void = () => {},
  ) {}

  private emit(): void {
    this.onChange(this.state);
  }

  private request(): InferenceRequest {
    const draft = this.state.draft;
    return {
      age: draft.age,
      gender: draft.gender,
      labs: draft.rows.map(({ name, unit, value, observed_at }) => ({
        name,
        unit,
        value,
        ...(observed_at ? { observed_at } : {}),
      })),
      top_n: draft.topN,
    };
  }

  /** Rows are submittable only when name, unit, value, and date are all set. */
  submittableRows(): DraftRow[] {
    return this.state.draft.rows.filter(
      (row) => row.name !== "" && row.unit !== "" && Number.isFinite(row.value) && !!row.observed_at,
    );
  }

  async submitPanel(): Promise<void> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    this.state = { ...this.state, pending: true, error: null };
    this.emit();
    try {
      const view = await this.api.likelyDiagnoses(this.request(), {
        explain: true,
        signal: controller.signal,
      });
      if (controller !== this.inflight) {
        return; // a newer submission superseded this one
      }
      this.state = { ...this.state, view, pending: false, error: null };
    } catch (error) {
      if (isAbort(error) || controller !== this.inflight) {
        return; // cancelled: the newer request owns the state
      }
      // the draft is untouched; only the error banner changes
      this.state = { ...this.state, pending: false, error: String((error as Error).message) };
    }
    this.emit();
  }

  async confirmPanel(): Promise<void> {
    try {
      const confirmations = await this.api.confirm(this.request());
      this.state = { ...this.state, confirmations, error: null };
    } catch (error) {
      this.state = { ...this.state, error: String((error as Error).message) };
    }
    this.emit();
  }

  addFollowupRow(group: string, lab: string, unit: string): void {
    this.state.draft.rows.push({
      name: lab,
      unit,
      value: Number.NaN,
      observed_at: "",
      fromFollowup: group,
    });
    this.emit();
  }

  toggleExplanation(group: string): void {
    this.state = {
      ...this.state,
      expandedGroup: this.state.expandedGroup === group ? null : group,
    };
    this.emit();
  }

  setTopN(topN: number): void {
    this.state.draft.topN = topN;
    this.emit();
  }
}
