import init, { drift, Demo } from "./pkg/quantgest_web.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

function fail(el, e) {
  el.innerHTML = `<span class="err">${e}</span>`;
}

function plotDrift() {
  const angles = $("angles").value.split(",").map(Number).filter((x) => !Number.isNaN(x));
  const duration = Number($("duration").value);
  let series;
  try {
    series = JSON.parse(drift(new Float64Array(angles), duration, 0.01));
  } catch (e) {
    return fail($("drift-info"), e);
  }
  const c = $("drift-plot").getContext("2d");
  const { width: w, height: h } = c.canvas;
  c.clearRect(0, 0, w, h);
  const ymax = Math.max(...series.flatMap((s) => s.error)) || 1;
  const px = (t) => 40 + (t / duration) * (w - 60);
  const py = (y) => h - 25 - (y / ymax) * (h - 40);
  c.strokeStyle = "#999";
  c.beginPath(); c.moveTo(40, 10); c.lineTo(40, h - 25); c.lineTo(w - 20, h - 25); c.stroke();
  c.fillStyle = "#555";
  c.fillText(`${ymax.toFixed(2)} m`, 2, 15);
  c.fillText(`${duration} s`, w - 40, h - 8);
  series.forEach((s, i) => {
    c.strokeStyle = COLORS[i % COLORS.length];
    c.beginPath();
    s.t.forEach((t, k) => (k ? c.lineTo(px(t), py(s.error[k])) : c.moveTo(px(t), py(s.error[k]))));
    c.stroke();
    c.setLineDash([4, 4]);
    c.beginPath();
    s.t.forEach((t, k) => (k ? c.lineTo(px(t), py(s.closed_form[k])) : c.moveTo(px(t), py(s.closed_form[k]))));
    c.stroke();
    c.setLineDash([]);
  });
  $("drift-info").innerHTML = series
    .map((s, i) => `<span style="color:${COLORS[i % COLORS.length]}">${s.angle_deg}&deg;: ` +
      `${s.error.at(-1).toFixed(3)} m after ${duration} s, log-log slope ${s.slope?.toFixed(3)}</span>`)
    .join("<br>") + "<br>Dashed: closed form &frac12; g sin(&Delta;&theta;) t&sup2;";
}

function plotDistributions(demo) {
  const [x, y, z] = ["dx", "dy", "dz"].map((id) => Number($(id).value));
  $("dist-point").textContent = `sample (${x.toFixed(2)}, ${y.toFixed(2)}, ${z.toFixed(2)}) g`;
  let d;
  try {
    d = JSON.parse(demo.distributions(Number($("dist-gesture").value), x, y, z));
  } catch (e) {
    return fail($("dist-point"), e);
  }
  const c = $("dist-plot").getContext("2d");
  const { width: w, height: h } = c.canvas;
  c.clearRect(0, 0, w, h);
  const n = d.gmm.length;
  const slot = (w - 20) / n;
  const ymax = Math.max(...d.gmm, ...d.inverse_distance);
  const bar = (i, p, dx, color) => {
    const bh = (p / ymax) * (h - 30);
    c.fillStyle = color;
    c.fillRect(10 + i * slot + dx, h - 20 - bh, slot / 2 - 3, bh);
  };
  for (let i = 0; i < n; i++) {
    bar(i, d.gmm[i], 2, "#1f77b4");
    bar(i, d.inverse_distance[i], slot / 2, "#aec7e8");
    c.fillStyle = "#555";
    c.fillText(String(i), 10 + i * slot + slot / 2 - 4, h - 6);
    if (i === d.nearest) {
      c.strokeStyle = "#d62728";
      c.strokeRect(10 + i * slot, 5, slot - 2, h - 25);
    }
  }
}

// Each press performs the gesture again with the next noise seed.
let trial = 0;

function runClassify(demo) {
  const out = $("cls-out");
  let r;
  try {
    r = JSON.parse(demo.classify(
      Number($("cls-gesture").value),
      Number($("noise").value),
      Number($("thr").value),
      $("quantizer").value,
      ++trial,
    ));
  } catch (e) {
    return fail(out, e);
  }
  const verdict = r.decision === null ? "no gesture (abstained)" : r.decision;
  const mark = r.decision === r.truth ? "correct" : r.decision === null ? "abstained" : "wrong";
  out.innerHTML = `Performed <b>${r.truth}</b>, decided <b>${verdict}</b> (${mark}) ` +
    `from ${r.samples_used} draws in ${r.elapsed_ms.toFixed(1)} ms`;
  $("cls-raw").textContent = r.estimates
    .map((e) => `${e.label.padEnd(14)} confidence ${e.confidence.toFixed(3)}  mean posterior ${e.mean_posterior.toFixed(3)}`)
    .join("\n");
}

async function main() {
  await init();
  $("drift-run").onclick = plotDrift;
  plotDrift();
  $("status").textContent = "Training models on synthetic gestures...";
  await new Promise((r) => setTimeout(r, 0));
  const demo = new Demo(6, 1);
  const labels = JSON.parse(demo.labels());
  for (const sel of [$("dist-gesture"), $("cls-gesture")]) {
    sel.innerHTML = labels.map((l, i) => `<option value="${i}">${l}</option>`).join("");
  }
  for (const id of ["dist-gesture", "dx", "dy", "dz"]) $(id).oninput = () => plotDistributions(demo);
  plotDistributions(demo);
  $("cls-run").onclick = () => runClassify(demo);
  $("status").textContent = `Ready: ${labels.length} gestures trained.`;
}

main().catch((e) => fail($("status"), e));
