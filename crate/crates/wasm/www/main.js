import init, { simulatePanel, estimate, compareSupport } from "./pkg/fgm_wasm.js";

const $ = (id) => document.getElementById(id);
let panel = null;

function status(msg, isError = false) {
  const el = $("status");
  el.textContent = msg;
  el.className = isError ? "err" : "";
}

function num(id) {
  return Number($(id).value);
}

function optional(id) {
  const v = $(id).value.trim();
  return v === "" || v === "auto" ? null : Number(v);
}

// red for positive, blue for negative partial correlations; diagonal blank
function heatmap(canvas, m) {
  const ctx = canvas.getContext("2d");
  const p = m.length;
  const cell = canvas.width / p;
  let scale = 1e-12;
  for (let i = 0; i < p; i++) for (let j = 0; j < p; j++) if (i !== j) scale = Math.max(scale, Math.abs(m[i][j]));
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < p; i++) {
    for (let j = 0; j < p; j++) {
      if (i === j) continue;
      const a = Math.min(1, Math.abs(m[i][j]) / scale);
      const c = Math.round(255 * (1 - a));
      ctx.fillStyle = m[i][j] >= 0 ? `rgb(255,${c},${c})` : `rgb(${c},${c},255)`;
      ctx.fillRect(j * cell, i * cell, Math.ceil(cell), Math.ceil(cell));
    }
  }
}

function bars(canvas, w) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const lo = Math.min(0, ...w);
  const hi = Math.max(0, ...w);
  const span = hi - lo || 1;
  const zero = height * (hi / span);
  const bw = width / w.length;
  ctx.fillStyle = "#4a7";
  w.forEach((v, i) => {
    const h = (v / span) * height;
    ctx.fillRect(i * bw + 1, v >= 0 ? zero - h : zero, Math.max(1, bw - 2), Math.abs(h));
  });
  ctx.strokeStyle = "#333";
  ctx.beginPath();
  ctx.moveTo(0, zero);
  ctx.lineTo(width, zero);
  ctx.stroke();
  // equal-weight reference
  const ew = zero - (1 / w.length / span) * height;
  ctx.strokeStyle = "#c60";
  ctx.setLineDash([4, 3]);
  ctx.beginPath();
  ctx.moveTo(0, ew);
  ctx.lineTo(width, ew);
  ctx.stroke();
  ctx.setLineDash([]);
}

function run(label, f) {
  status(`${label}…`);
  // let the status line paint before blocking on wasm
  setTimeout(() => {
    try {
      const t0 = performance.now();
      f();
      status(`${label} done in ${((performance.now() - t0) / 1000).toFixed(2)} s`);
    } catch (e) {
      status(String(e.message ?? e), true);
    }
  }, 10);
}

function onSimulate() {
  run("Simulating", () => {
    panel = JSON.parse(simulatePanel(num("seed"), num("t"), num("p"), num("q")));
    heatmap($("truth"), panel.partial_corr_true);
    $("estimate").disabled = false;
  });
}

function onEstimate() {
  run("Estimating", () => {
    const request = {
      errors: panel.errors,
      method: $("method").value,
      q: optional("qhat"),
      lambda: optional("lambda"),
    };
    const r = JSON.parse(estimate(JSON.stringify(request)));
    heatmap($("est"), r.partial_corr);
    bars($("weights"), r.weights);
    const lam = r.glasso_lambda == null ? "" : `, λ = ${r.glasso_lambda.toPrecision(3)}`;
    $("summary").textContent =
      `${r.method}: q̂ = ${r.q}${lam}, off-diagonal density ${r.offdiag_density.toFixed(3)}, ` +
      `weights in [${Math.min(...r.weights).toFixed(3)}, ${Math.max(...r.weights).toFixed(3)}]`;
  });
}

function onCompare() {
  run("Comparing", () => {
    const rows = JSON.parse(compareSupport(num("seed"), num("t"), num("p"), num("q"), num("qmax")));
    const body = rows
      .map((r) => `<tr><th>${r.name}</th><td>${r.f1.toFixed(3)}</td><td>${r.density.toFixed(3)}</td></tr>`)
      .join("");
    $("support").innerHTML =
      `<h3>Support recovery against the population precision</h3>` +
      `<table><tr><th>estimator</th><th>F1</th><th>density</th></tr>${body}</table>`;
  });
}

await init();
$("simulate").addEventListener("click", onSimulate);
$("estimate").addEventListener("click", onEstimate);
$("compare").addEventListener("click", onCompare);
onSimulate();
