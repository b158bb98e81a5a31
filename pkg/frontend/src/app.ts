// DOM wiring: binds the form to the session state machine and paints the
// renderers' HTML into the page.  Served by the inference service's
// static route; all data comes from its JSON API.

import { HttpApi } from "./api.js";
import {
  renderConfirmations,
  renderErrorBanner,
  renderRankedCards,
  renderRejectedLabs,
} from "./render.js";
import { ConsoleSession } from "./state.js";
import type { SessionState as State } from "./state.js";
import type { CatalogListing } from "./types.js";

const api = new HttpApi();
let unitByLab = new Map<string, string>();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function currentRows(): { name: string; unit: string; value: number; observed_at?: string }[] {
  const rows: { name: string; unit: string; value: number; observed_at?: string }[] = [];
  document.querySelectorAll<HTMLTableRowElement>("#lab-rows tr").forEach((tr) => {
    const name = tr.querySelector<HTMLInputElement>(".lab-name")!.value.trim();
    const unit = tr.querySelector<HTMLInputElement>(".lab-unit")!.value.trim();
    const value = Number(tr.querySelector<HTMLInputElement>(".lab-value")!.value);
    const date = tr.querySelector<HTMLInputElement>(".lab-date")!.value;
    if (name && unit && Number.isFinite(value) && date) {
      rows.push({ name, unit, value, observed_at: date });
    }
  });
  return rows;
}

function addRow(name = "", unit = "", highlight = false): void {
  const tbody = el<HTMLTableSectionElement>("lab-rows");
  const tr = document.createElement("tr");
  if (highlight) {
    tr.className = "followup-row";
  }
  tr.innerHTML = `
    <td><input class="lab-name" list="lab-keys" value="${name}" placeholder="lab name"></td>
    <td><input class="lab-unit" value="${unit}" placeholder="unit"></td>
    <td><input class="lab-value" type="number" step="any" placeholder="value"></td>
    <td><input class="lab-date" type="date"></td>
    <td><button class="remove" type="button">x</button></td>`;
  tr.querySelector<HTMLInputElement>(".lab-name")!.addEventListener("change", (event) => {
    const input = event.target as HTMLInputElement;
    const unitInput = tr.querySelector<HTMLInputElement>(".lab-unit")!;
    const canonical = unitByLab.get(input.value.trim().toLowerCase());
    if (canonical && !unitInput.value) {
      unitInput.value = canonical;
    }
  });
  tr.querySelector<HTMLButtonElement>(".remove")!.addEventListener("click", () => tr.remove());
  tbody.appendChild(tr);
}

function syncDraft(session: ConsoleSession): void {
  const age = Number(el<HTMLInputElement>("age").value);
  session.state.draft.age = Number.isFinite(age) && el<HTMLInputElement>("age").value !== "" ? age : null;
  session.state.draft.gender = el<HTMLSelectElement>("gender").value;
  session.state.draft.topN = Number(el<HTMLSelectElement>("rank-count").value);
  session.state.draft.rows = currentRows();
}

function paint(state: State): void {
  el("status").textContent = state.pending ? "asking the model..." : "";
  el("error-banner").innerHTML = renderErrorBanner(state.error);
  if (state.view) {
    el("cards").innerHTML = renderRankedCards(state.view, state.expandedGroup);
    el("rejected").innerHTML = renderRejectedLabs(state.view.rejected_labs);
  }
  el("confirmations").innerHTML =
    state.confirmations === null ? "" : renderConfirmations(state.confirmations);
}

async function boot(): Promise<void> {
  const session = new ConsoleSession(api, paint);

  let catalog: CatalogListing | null = null;
  try {
    catalog = await api.catalog();
  } catch {
    el("error-banner").innerHTML = renderErrorBanner("catalog unavailable; free-text entry only");
  }
  if (catalog) {
    const datalist = el<HTMLDataListElement>("lab-keys");
    for (const lab of catalog.labs) {
      unitByLab.set(lab.key.toLowerCase(), lab.canonical_unit);
      const option = document.createElement("option");
      option.value = lab.key;
      option.label = `${lab.key} (${lab.canonical_unit})`;
      datalist.appendChild(option);
    }
    const rankCount = el<HTMLSelectElement>("rank-count");
    for (let n = 1; n <= catalog.groups.length; n += 1) {
      const option = document.createElement("option");
      option.value = String(n);
      option.textContent = String(n);
      if (n === 5) {
        option.selected = true;
      }
      rankCount.appendChild(option);
    }
  }

  addRow();
  el("add-row").addEventListener("click", () => addRow());

  el("submit").addEventListener("click", async () => {
    syncDraft(session);
    await session.submitPanel();
  });

  el("check-confirmations").addEventListener("click", async () => {
    syncDraft(session);
    await session.confirmPanel();
  });

  el("cards").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.classList.contains("chip")) {
      const lab = target.dataset.lab!;
      addRow(lab, unitByLab.get(lab.toLowerCase()) ?? "", true);
      el("check-confirmations").scrollIntoView({ behavior: "smooth" });
    }
    if (target.classList.contains("drilldown")) {
      session.toggleExplanation(target.dataset.group!);
    }
  });
}

if (typeof document !== "undefined" && document.getElementById("console-app")) {
  void boot();
}
