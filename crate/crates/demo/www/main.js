import init, { threshold_explorer, cv_curve, cluster_explorer } from "./pkg/sce_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function color(v) {
  const a = Math.min(1, Math.abs(v));
  const fade = Math.round(255 * (1 - a));
  return v >= 0 ? `rgb(255,${fade},${fade})` : `rgb(${fade},${fade},255)`;
}

function heatmap(canvas, m) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const n = m.length;
  if (n === 0) return;
  const cell = canvas.width / n;
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      ctx.fillStyle = color(m[i][j]);
      ctx.fillRect(j * cell, i * cell, Math.ceil(cell), Math.ceil(cell));
    }
  }
}

function parse(text, statsEl) {
  const v = JSON.parse(text);
  if (v.error) {
    statsEl.textContent = v.error;
    statsEl.classList.add("error");
    return null;
  }
  statsEl.classList.remove("error");
  return v;
}

function updateThreshold() {
  const s = num("t-s");
  $("t-s-val").textContent = s.toFixed(3);
  const v = parse(
    threshold_explorer($("t-structure").value, num("t-dim"), num("t-nobs"), num("t-seed"), s, $("t-kind").value),
    $("t-stats"),
  );
  if (!v) return;
  heatmap($("t-truth"), v.truth);
  heatmap($("t-est"), v.estimate);
  heatmap($("t-reg"), v.thresholded);
  $("t-stats").textContent = [
    `off-diagonal support  ${v.support} (true ${v.true_support})`,
    `Frobenius error       ${v.frobenius_error.toFixed(4)}`,
    `operator error        ${v.operator_error.toFixed(4)}`,
    `min eigenvalue        ${v.min_eigenvalue.toFixed(4)}`,
  ].join("\n");
}

function line(ctx, xs, ys, x0, x1, y0, y1, w, h, style) {
  ctx.strokeStyle = style;
  ctx.beginPath();
  xs.forEach((x, i) => {
    const px = 40 + ((x - x0) / (x1 - x0 || 1)) * (w - 80);
    const py = h - 30 - ((ys[i] - y0) / (y1 - y0 || 1)) * (h - 50);
    i === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
  });
  ctx.stroke();
}

function updateCv() {
  const v = parse(
    cv_curve($("c-structure").value, num("c-dim"), num("c-nobs"), num("c-seed"), num("c-splits"), num("c-grid")),
    $("c-stats"),
  );
  if (!v) return;
  const canvas = $("c-plot");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const g0 = v.grid[0];
  const g1 = v.grid[v.grid.length - 1];
  ctx.lineWidth = 2;
  line(ctx, v.grid, v.losses, g0, g1, Math.min(...v.losses), Math.max(...v.losses), w, h, "#000");
  line(ctx, v.grid, v.true_errors, g0, g1, Math.min(...v.true_errors), Math.max(...v.true_errors), w, h, "#e67e22");
  const mark = (s, style) => {
    const px = 40 + ((s - g0) / (g1 - g0 || 1)) * (w - 80);
    ctx.strokeStyle = style;
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(px, 10);
    ctx.lineTo(px, h - 30);
    ctx.stroke();
    ctx.setLineDash([]);
  };
  mark(v.selected, "#888");
  mark(v.full_sample_threshold, "#2a7");
  ctx.fillStyle = "#000";
  ctx.fillText(g0.toFixed(2), 35, h - 12);
  ctx.fillText(g1.toFixed(2), w - 55, h - 12);
  const best = v.grid[v.true_errors.indexOf(Math.min(...v.true_errors))];
  $("c-stats").textContent = [
    `t1 = ${v.t1}, t2 = ${v.t2}`,
    `CV minimizer (grey)          ${v.selected.toFixed(4)}`,
    `full-sample threshold (green) ${v.full_sample_threshold.toFixed(4)}`,
    `its true error               ${v.rescaled_error.toFixed(4)}`,
    `best grid point              ${best.toFixed(4)} (${Math.min(...v.true_errors).toFixed(4)})`,
  ].join("\n");
}

function updateCluster() {
  const s = num("k-s");
  $("k-s-val").textContent = s.toFixed(3);
  const v = parse(cluster_explorer($("k-blocks").value, num("k-nobs"), num("k-seed"), s, $("k-mode").value), $("k-text"));
  if (!v) {
    heatmap($("k-pattern"), []);
    return;
  }
  heatmap($("k-pattern"), v.pattern);
  $("k-text").textContent = v.text;
}

await init();
for (const id of ["t-structure", "t-dim", "t-nobs", "t-seed", "t-kind", "t-s"]) $(id).addEventListener("input", updateThreshold);
for (const id of ["k-blocks", "k-nobs", "k-seed", "k-mode", "k-s"]) $(id).addEventListener("input", updateCluster);
$("c-run").addEventListener("click", updateCv);
updateThreshold();
updateCv();
updateCluster();
