// Deterministic HTML for a SessionView. A string renderer keeps the DOM
// structure snapshot-testable without a browser; main.ts mounts it.

import type { SessionView } from "./view.js";

function escape(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function renderHtml(view: SessionView): string {
  const lines: string[] = [];
  lines.push(`<header class="session-header">`);
  lines.push(`  <h1>${escape(view.title)}</h1>`);
  lines.push(
    `  <div class="status-line">` +
      `<span class="progress">${escape(view.progressLabel)} steps</span>` +
      `<span class="confidence">confidence ${view.confidence.toFixed(2)}</span>` +
      `<span class="off-task${view.offTask ? " lit" : ""}">off task</span>` +
      `</div>`,
  );
  if (view.completionBanner) {
    lines.push(`  <div class="banner completion">Task complete</div>`);
  }
  lines.push(`</header>`);

  lines.push(`<ol class="steps">`);
  for (const row of view.stepRows) {
    lines.push(
      `  <li class="step ${row.status}" data-index="${row.index}">` +
        `${escape(row.description)}</li>`,
    );
  }
  lines.push(`</ol>`);

  lines.push(`<section class="scene">`);
  for (const node of view.nodes) {
    const classes = ["node", node.kind.toLowerCase()];
    if (node.highlighted) {
      classes.push("highlighted");
    }
    if (node.virtual) {
      classes.push("virtual");
    }
    lines.push(`  <span class="${classes.join(" ")}" data-id="${escape(node.id)}">${escape(node.label)}</span>`);
  }
  lines.push(`  <ul class="edges">`);
  for (const edge of view.edges) {
    lines.push(
      `    <li class="edge ${edge.category.toLowerCase()}">` +
        `${escape(edge.source)} –${escape(edge.kind)}→ ${escape(edge.target)}</li>`,
    );
  }
  lines.push(`  </ul>`);
  lines.push(`</section>`);

  lines.push(`<section class="guidance">`);
  for (const banner of view.voiceBanners) {
    lines.push(`  <div class="banner voice">${escape(banner)}</div>`);
  }
  for (const tip of view.tips) {
    lines.push(`  <div class="tip" data-anchor="${escape(tip.anchor)}">${escape(tip.text)}</div>`);
  }
  for (const warning of view.warnings) {
    lines.push(`  <div class="warning">${escape(warning)}</div>`);
  }
  lines.push(`</section>`);
  return lines.join("\n");
}
