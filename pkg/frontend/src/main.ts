// DOM wiring for the what-if console.  All geometry/formatting comes from the
// pure modules; this file only reads inputs and writes elements.

import { ApiClient } from "./api.js";
import {
  DEFAULT_VIEWPORT,
  bandPath,
  colorFor,
  constraintMarkers,
  curvePath,
  doseTicks,
  volumeTicks,
} from "./chart.js";
import { Snapshot, WhatIfController } from "./controller.js";
import { deltaCells, pointDoseRows, constraintSummary } from "./table.js";
import { FEATURE_NAMES, FeatureValues, Organ, POINT_DOSES } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const apiInput = $<HTMLInputElement>("api-url");
const client = new ApiClient(apiInput.value);
const controller = new WhatIfController(client, render);

const SLIDER_FIELDS: (keyof FeatureValues)[] = ["rectum_overlap_frac", "bladder_overlap_frac"];

function wireInputs(): void {
  for (const field of FEATURE_NAMES) {
    const input = $<HTMLInputElement>(field);
    const handler = () => {
      void controller.setFeature(field, parseFloat(input.value));
      if (SLIDER_FIELDS.includes(field)) {
        $(`${field}_value`).textContent = parseFloat(input.value).toFixed(2);
      }
    };
    // sliders fire on release so a drag issues one request, not dozens
    input.addEventListener("change", handler);
  }
  $<HTMLSelectElement>("organ").addEventListener("change", (e) => {
    void controller.setOrgan((e.target as HTMLSelectElement).value as Organ);
  });
  $("pin").addEventListener("click", () => controller.pin());
  $("unpin").addEventListener("click", () => controller.unpin());
  apiInput.addEventListener("change", () => {
    client.setBaseUrl(apiInput.value);
    void bootstrapModels();
  });
}

async function bootstrapModels(): Promise<void> {
  const box = $("algorithms");
  try {
    const models = await client.models();
    const organ = $<HTMLSelectElement>("organ").value;
    const roster = models.algorithms[organ] ?? [];
    box.innerHTML = "";
    for (const algorithm of roster) {
      const label = document.createElement("label");
      const cb = document.createElement("input");
      cb.type = "checkbox";
      cb.value = algorithm;
      cb.checked = ["LR", "RF", "FRBP"].includes(algorithm);
      cb.addEventListener("change", () => {
        const selected = Array.from(
          box.querySelectorAll<HTMLInputElement>("input:checked"),
        ).map((el) => el.value);
        void controller.setAlgorithms(selected);
      });
      label.appendChild(cb);
      label.appendChild(document.createTextNode(algorithm));
      box.appendChild(label);
    }
    void controller.setAlgorithms(roster.filter((a) => ["LR", "RF", "FRBP"].includes(a)));
  } catch (err) {
    box.textContent = `service unreachable: ${err instanceof Error ? err.message : err}`;
  }
}

function svgEl(tag: string, attrs: Record<string, string>, text?: string): SVGElement {
  const el = document.createElementNS("http://www.w3.org/2000/svg", tag);
  for (const [k, v] of Object.entries(attrs)) el.setAttribute(k, v);
  if (text !== undefined) el.textContent = text;
  return el;
}

function renderChart(snapshot: Snapshot): void {
  const vp = DEFAULT_VIEWPORT;
  const svg = $("chart");
  svg.innerHTML = "";
  for (const tick of doseTicks(vp)) {
    svg.appendChild(
      svgEl("line", {
        x1: `${tick.pos}`,
        x2: `${tick.pos}`,
        y1: `${vp.marginTop}`,
        y2: `${vp.height - vp.marginBottom}`,
        class: "grid",
      }),
    );
    svg.appendChild(
      svgEl(
        "text",
        { x: `${tick.pos}`, y: `${vp.height - vp.marginBottom + 16}`, class: "tick" },
        tick.label,
      ),
    );
  }
  for (const tick of volumeTicks(vp)) {
    svg.appendChild(
      svgEl("line", {
        x1: `${vp.marginLeft}`,
        x2: `${vp.width - vp.marginRight}`,
        y1: `${tick.pos}`,
        y2: `${tick.pos}`,
        class: "grid",
      }),
    );
    svg.appendChild(
      svgEl("text", { x: `${vp.marginLeft - 8}`, y: `${tick.pos + 4}`, class: "tick ylab" }, tick.label),
    );
  }
  svg.appendChild(
    svgEl(
      "text",
      { x: `${vp.width / 2}`, y: `${vp.height - 6}`, class: "axis-label" },
      "dose (cGy)",
    ),
  );

  const prediction = snapshot.prediction;
  if (!prediction) return;

  if (prediction.band) {
    svg.appendChild(svgEl("path", { d: bandPath(prediction.band, vp), class: "band" }));
  }
  if (snapshot.pinned) {
    for (const [algorithm, curve] of Object.entries(snapshot.pinned.response.curves)) {
      svg.appendChild(
        svgEl("path", {
          d: curvePath(curve, vp),
          class: "curve pinned",
          stroke: colorFor(algorithm, prediction.algorithms),
        }),
      );
    }
  }
  for (const [algorithm, curve] of Object.entries(prediction.curves)) {
    svg.appendChild(
      svgEl("path", {
        d: curvePath(curve, vp),
        class: "curve",
        stroke: colorFor(algorithm, prediction.algorithms),
      }),
    );
  }
  const flags = Object.values(prediction.constraint_flags)[0] ?? [];
  for (const marker of constraintMarkers(flags, vp)) {
    svg.appendChild(
      svgEl("circle", {
        cx: `${marker.x}`,
        cy: `${marker.y}`,
        r: "5",
        class: marker.pass ? "marker pass" : "marker fail",
      }),
    );
  }
}

function render(snapshot: Snapshot): void {
  renderChart(snapshot);

  const errors = $("errors");
  errors.innerHTML = "";
  for (const e of snapshot.errors) {
    const li = document.createElement("li");
    li.textContent = `${e.field}: ${e.message}`;
    errors.appendChild(li);
  }
  if (snapshot.lastError) {
    const li = document.createElement("li");
    li.textContent = snapshot.lastError;
    errors.appendChild(li);
  }
  $("status").textContent = snapshot.loading
    ? "predicting…"
    : `${snapshot.requestCount} requests`;

  const legend = $("legend");
  legend.innerHTML = "";
  if (snapshot.prediction) {
    for (const algorithm of snapshot.prediction.algorithms) {
      const item = document.createElement("span");
      item.className = "legend-item";
      item.style.borderLeftColor = colorFor(algorithm, snapshot.prediction.algorithms);
      item.textContent = algorithm;
      legend.appendChild(item);
    }
  }

  const table = $<HTMLTableElement>("point-table");
  table.innerHTML = "";
  if (snapshot.prediction) {
    const head = table.insertRow();
    head.insertCell().textContent = "model";
    for (const d of POINT_DOSES) head.insertCell().textContent = `${d} cGy`;
    for (const row of pointDoseRows(snapshot.prediction)) {
      const tr = table.insertRow();
      tr.insertCell().textContent = row.algorithm;
      for (const cell of row.cells) tr.insertCell().textContent = cell;
    }
  }

  const deltaBox = $("delta-box");
  const deltaTable = $<HTMLTableElement>("delta-table");
  deltaTable.innerHTML = "";
  if (snapshot.deltas) {
    deltaBox.style.display = "block";
    const head = deltaTable.insertRow();
    head.insertCell().textContent = "Δ vs pinned";
    for (const d of POINT_DOSES) head.insertCell().textContent = `${d} cGy`;
    for (const row of snapshot.deltas) {
      const tr = deltaTable.insertRow();
      tr.insertCell().textContent = row.algorithm;
      for (const cell of deltaCells(row)) tr.insertCell().textContent = cell;
    }
  } else {
    deltaBox.style.display = "none";
  }

  const violations = $("violations");
  violations.innerHTML = "";
  if (snapshot.prediction) {
    for (const line of constraintSummary(snapshot.prediction)) {
      const li = document.createElement("li");
      li.textContent = line;
      violations.appendChild(li);
    }
  }

  $<HTMLButtonElement>("pin").disabled = !snapshot.prediction;
  $<HTMLButtonElement>("unpin").disabled = !snapshot.pinned;
}

wireInputs();
void bootstrapModels();
