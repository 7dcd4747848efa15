import init, { se_curve, tradeoff, component_law } from "./pkg/privlasso_wasm.js";

const num = (id) => parseFloat(document.getElementById(id).value);
const model = () => [num("alpha"), num("rho"), num("sigma_xi"), num("lambda")];

function plot(canvas, series, { logY = false, xLabel = "", yLabel = "" } = {}) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 48;
  ctx.clearRect(0, 0, w, h);
  const fy = logY ? (y) => Math.log10(y) : (y) => y;
  const pts = series.flatMap((s) => s.points).filter(([x, y]) => isFinite(x) && isFinite(fy(y)));
  if (pts.length === 0) return;
  const xs = pts.map((p) => p[0]);
  const ys = pts.map((p) => fy(p[1]));
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  const sx = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const sy = (y) => h - pad - ((fy(y) - y0) / (y1 - y0 || 1)) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#333";
  ctx.font = "12px sans-serif";
  ctx.fillText(xLabel, w / 2, h - 12);
  ctx.fillText(yLabel + (logY ? " (log10)" : ""), 4, pad - 10);
  ctx.fillText(x0.toPrecision(3), pad, h - pad + 14);
  ctx.fillText(x1.toPrecision(3), w - pad - 30, h - pad + 14);
  ctx.fillText(y0.toPrecision(3), 4, h - pad);
  ctx.fillText(y1.toPrecision(3), 4, pad + 10);
  series.forEach((s, k) => {
    ctx.strokeStyle = s.color;
    ctx.fillStyle = s.color;
    ctx.beginPath();
    let open = false;
    for (const [x, y] of s.points) {
      if (!isFinite(x) || !isFinite(fy(y))) { open = false; continue; }
      open ? ctx.lineTo(sx(x), sy(y)) : ctx.moveTo(sx(x), sy(y));
      open = true;
    }
    ctx.stroke();
    for (const [x, y] of s.marks || []) {
      ctx.beginPath();
      ctx.arc(sx(x), sy(y), 4, 0, 2 * Math.PI);
      ctx.fill();
    }
    ctx.fillText(s.name, w - pad - 140, pad + 16 + 16 * k);
  });
}

function guarded(errId, f) {
  return () => {
    document.getElementById(errId).textContent = "";
    try { f(); } catch (e) { document.getElementById(errId).textContent = String(e.message || e); }
  };
}

function drawSe() {
  const args = model();
  const max = num("se_max");
  const series = [false, true].map((output) => {
    const pts = JSON.parse(se_curve(...args, output, max, 61));
    return {
      name: output ? "output" : "objective",
      color: output ? "#1f77b4" : "#d62728",
      points: pts.map((p) => [p.sigma_eta, p.stable ? p.e_gen : NaN]),
    };
  });
  plot(document.getElementById("se_plot"), series, { xLabel: "sigma_eta", yLabel: "E_gen" });
}

function drawTradeoff() {
  const t = JSON.parse(tradeoff(...model(), 120));
  const curve = (pts, opt, name, color) => ({
    name, color,
    points: pts.map((p) => [p.e_gen, p.stable ? p.cwonavekl : NaN]),
    marks: opt ? [[opt.e_gen, opt.cwonavekl]] : [],
  });
  plot(document.getElementById("to_plot"), [
    curve(t.output, t.output_optimum, "output", "#1f77b4"),
    curve(t.objective, t.objective_optimum, "objective", "#d62728"),
  ], { logY: true, xLabel: "E_gen", yLabel: "cwOnAveKL" });
  const fmt = (o) => (o ? o.sigma_eta.toPrecision(3) : "none");
  document.getElementById("to_info").textContent =
    `optimal sigma_eta: output ${fmt(t.output_optimum)}, objective ${fmt(t.objective_optimum)}; E_gen(0) = ${t.e_gen_noiseless.toPrecision(4)}`;
}

function drawLaw() {
  const c = JSON.parse(component_law(...model(), num("cl_sigma_eta"), num("cl_beta0"), num("cl_eta"), 801));
  plot(document.getElementById("cl_plot"), [
    { name: "density", color: "#2ca02c", points: c.beta.map((b, i) => [b, c.density[i]]) },
  ], { xLabel: "beta", yLabel: "density" });
  document.getElementById("cl_info").textContent =
    `atom at zero ${c.atom.toPrecision(4)}; Sigma ${c.sigma.toPrecision(4)}, sigma_z ${c.sigma_z.toPrecision(4)}` +
    (c.stable ? "" : " (unstable fixed point)");
}

await init();
document.getElementById("se_run").onclick = guarded("se_err", drawSe);
document.getElementById("to_run").onclick = guarded("to_err", drawTradeoff);
document.getElementById("cl_run").onclick = guarded("cl_err", drawLaw);
guarded("se_err", drawSe)();
guarded("to_err", drawTradeoff)();
guarded("cl_err", drawLaw)();
