import init, { blob_spectrum, pbfgs_vs_gd, noise_demo } from "./pkg/dldr_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function clear(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  return ctx;
}

function bars(canvas, values) {
  const ctx = clear(canvas);
  const w = canvas.width / values.length;
  ctx.fillStyle = "#3b6ea5";
  values.forEach((v, i) => {
    const h = v * (canvas.height - 10);
    ctx.fillRect(i * w + 1, canvas.height - h, Math.max(w - 2, 1), h);
  });
}

function lines(canvas, series, colors) {
  const ctx = clear(canvas);
  const all = series.flat().filter(Number.isFinite);
  const lo = Math.min(...all), hi = Math.max(...all);
  const span = hi - lo || 1;
  series.forEach((s, k) => {
    ctx.strokeStyle = colors[k];
    ctx.lineWidth = 2;
    ctx.beginPath();
    s.forEach((v, i) => {
      const x = (i / Math.max(s.length - 1, 1)) * (canvas.width - 10) + 5;
      const y = canvas.height - 5 - ((v - lo) / span) * (canvas.height - 10);
      i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
    });
    ctx.stroke();
  });
}

function guard(out, f) {
  try {
    f();
  } catch (e) {
    $(out).textContent = `error: ${e.message ?? e}`;
  }
}

await init();

$("sp-run").onclick = () => guard("sp-out", () => {
  const r = Array.from(blob_spectrum(num("sp-epochs"), num("sp-k"), BigInt(num("sp-seed"))));
  bars($("sp-plot"), r);
  let cum = 0;
  $("sp-out").textContent = r.slice(0, 6).map((v, i) => {
    cum += v;
    return `component ${i + 1}: ${(100 * v).toFixed(2)}%  (cumulative ${(100 * cum).toFixed(2)}%)`;
  }).join("\n");
});

$("q-run").onclick = () => guard("q-out", () => {
  const steps = num("q-steps");
  const r = Array.from(pbfgs_vs_gd(num("q-n"), num("q-d"), num("q-cond"), steps, 1n));
  const log = (v) => Math.log10(Math.max(v, 1e-16));
  const bfgs = r.slice(0, steps).map(log), gd = r.slice(steps).map(log);
  lines($("q-plot"), [bfgs, gd], ["#c0392b", "#7f8c8d"]);
  $("q-out").textContent =
    `red: P-BFGS, final gap ${r[steps - 1].toExponential(2)}\n` +
    `grey: gradient descent, final gap ${r[2 * steps - 1].toExponential(2)}`;
});

$("n-run").onclick = () => guard("n-out", () => {
  $("n-out").textContent = "training...";
  setTimeout(() => guard("n-out", () => {
    const [f, b, p] = noise_demo(num("n-frac"), num("n-d"), BigInt(num("n-seed")));
    const pct = (x) => `${(100 * x).toFixed(1)}%`;
    $("n-out").textContent = `SGD final ${pct(f)}   SGD best ${pct(b)}   P-SGD final ${pct(p)}`;
  }), 0);
});
