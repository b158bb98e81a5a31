// Pure HTML renderers.  Every number shown on screen is copied from a
// service response field (exact values ride along in data-* attributes so
// the contract tests can compare them verbatim against the fixtures).

import type {
  Confirmation,
  Explanation,
  InferenceResponse,
  RejectedLab,
} from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function formatProbability(p: number): string {
  return `${(p * 100).toFixed(1)}%`;
}

export function formatMargin(m: number): string {
  return m.toFixed(4);
}

export function renderRankedCards(
  response: InferenceResponse,
  expandedGroup: string | null = null,
): string {
  const cards = response.ranked.map((entry, rank) => {
    const expanded = entry.group === expandedGroup;
    const widthPct = Math.max(1, Math.round(entry.probability * 100));
    const chips = renderFollowupChips(entry.group, response.recommended_labs[entry.group] ?? []);
    const explanation =
      expanded && response.explanations?.[entry.group]
        ? renderExplanation(response.explanations[entry.group]!)
        : "";
    return `
<article class="card${expanded ? " expanded" : ""}" data-group="${escapeHtml(entry.group)}" data-probability="${entry.probability}">
  <header>
    <span class="rank">#${rank + 1}</span>
    <span class="group">${escapeHtml(entry.group)}</span>
    <span class="probability">${formatProbability(entry.probability)}</span>
  </header>
  <div class="bar-track"><div class="bar" style="width:${widthPct}%"></div></div>
  ${chips}
  <button class="drilldown" data-group="${escapeHtml(entry.group)}">${expanded ? "hide impact" : "why?"}</button>
  ${explanation}
</article>`;
  });
  return cards.join("\n");
}

export function renderFollowupChips(group: string, labs: string[]): string {
  if (labs.length === 0) {
    return "";
  }
  const chips = labs
    .map(
      (lab) =>
        `<button class="chip" data-group="${escapeHtml(group)}" data-lab="${escapeHtml(lab)}">+ ${escapeHtml(lab)}</button>`,
    )
    .join(" ");
  return `<div class="followups">order to confirm: ${chips}</div>`;
}

export function renderExplanation(explanation: Explanation): string {
  const contributing = explanation.features
    .filter((f) => f.phi !== 0)
    .sort((a, b) => Math.abs(b.phi) - Math.abs(a.phi));
  const maxAbs = contributing.reduce((m, f) => Math.max(m, Math.abs(f.phi)), 0) || 1;
  const bars = contributing
    .map((f) => {
      const width = Math.max(1, Math.round((Math.abs(f.phi) / maxAbs) * 100));
      const side = f.phi >= 0 ? "pos" : "neg";
      const valueLabel = f.value === null ? "missing" : String(f.value);
      return `
  <div class="phi-row" data-feature="${escapeHtml(f.name)}" data-phi="${f.phi}">
    <span class="phi-name">${escapeHtml(f.name)} = ${escapeHtml(valueLabel)}</span>
    <span class="phi-bar ${side}" style="width:${width}%"></span>
    <span class="phi-value">${f.phi >= 0 ? "+" : ""}${f.phi.toFixed(4)}</span>
  </div>`;
    })
    .join("");
  return `
<section class="explanation" data-class="${escapeHtml(explanation.class)}" data-base="${explanation.base_value}" data-fx="${explanation.fx}">
  <p class="margin-note">baseline margin ${formatMargin(explanation.base_value)}
    + contributions = <strong class="margin-label">${formatMargin(explanation.fx)}</strong></p>
  ${bars || '<p class="empty-note">no feature moved this prediction</p>'}
</section>`;
}

export function renderConfirmations(confirmations: Confirmation[]): string {
  if (confirmations.length === 0) {
    return '<p class="not-confirmed">No diagnosis confirmed by the current panel.</p>';
  }
  return confirmations
    .map((c) => {
      const label = c.display_name ? ` — ${escapeHtml(c.display_name)}` : "";
      const matched = c.matched
        .map(
          (m) =>
            `<li><code>${escapeHtml(m.condition)}</code> (observed ${escapeHtml(String(m.value))})</li>`,
        )
        .join("");
      return `
<aside class="banner confirmed" data-icd10="${escapeHtml(c.icd10)}" data-rule="${escapeHtml(c.rule_id)}">
  <strong>${escapeHtml(c.icd10)} confirmed</strong>${label}
  <span class="rule-ref">rule ${escapeHtml(c.rule_id)}</span>
  <ul>${matched}</ul>
</aside>`;
    })
    .join("\n");
}

export function renderRejectedLabs(rejected: RejectedLab[]): string {
  if (rejected.length === 0) {
    return "";
  }
  const items = rejected
    .map(
      (r) =>
        `<li data-name="${escapeHtml(r.name)}" data-reason="${escapeHtml(r.reason)}">${escapeHtml(r.name)}: ${escapeHtml(r.reason.replace("_", " "))}</li>`,
    )
    .join("");
  return `<div class="rejected">some entries could not be used:<ul>${items}</ul></div>`;
}

export function renderErrorBanner(message: string | null): string {
  if (!message) {
    return "";
  }
  return `<div class="banner error">${escapeHtml(message)} — your entries are unchanged.</div>`;
}
