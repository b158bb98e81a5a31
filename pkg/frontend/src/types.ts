// Wire types mirroring the service's JSON API.  The console renders these
// verbatim; it never computes clinical numbers of its own.

export interface LabEntry {
  name: string;
  unit: string;
  value: number;
  observed_at?: string;
}

export interface InferenceRequest {
  age: number | null;
  gender: string;
  labs: LabEntry[];
  top_n: number;
}

export interface RankedGroup {
  group: string;
  probability: number;
}

export interface RejectedLab {
  name: string;
  reason: string;
}

export interface ExplanationFeature {
  name: string;
  value: number | null;
  phi: number;
}

export interface Explanation {
  class: string;
  base_value: number;
  fx: number;
  features: ExplanationFeature[];
}

export interface InferenceResponse {
  ranked: RankedGroup[];
  rejected_labs: RejectedLab[];
  recommended_labs: Record<string, string[]>;
  explanations?: Record<string, Explanation>;
}

export interface MatchedCondition {
  condition: string;
  value: number | string;
}

export interface Confirmation {
  rule_id: string;
  icd10: string;
  display_name: string | null;
  matched: MatchedCondition[];
}

export interface CatalogLab {
  key: string;
  canonical_unit: string;
  aliases: string[];
}

export interface CatalogListing {
  labs: CatalogLab[];
  groups: string[];
}
