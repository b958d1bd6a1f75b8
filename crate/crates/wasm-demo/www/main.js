import init, { render_stack, surgery_deviation, cost_table } from "./pkg/mfdet_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function showStrip() {
  try {
    const strip = render_stack($("preset").value, num("seed"), 64, num("t"), num("frames"), num("step"));
    const canvas = $("strip");
    canvas.width = strip.width;
    canvas.height = strip.height;
    canvas.style.width = `${strip.width * 3}px`;
    const data = new ImageData(new Uint8ClampedArray(strip.rgba()), strip.width, strip.height);
    canvas.getContext("2d").putImageData(data, 0, 0);
    $("strip-info").textContent = `oldest frame left, target frame right; ${strip.labels} labeled object(s) on the target frame`;
    strip.free();
  } catch (e) {
    $("strip-info").textContent = String(e);
  }
}

function verify() {
  const grouped = $("scheme").value === "grouped";
  const n = num("surgery-n");
  try {
    const dev = surgery_deviation(grouped, n, num("trials"), 0);
    const verdict = dev < 1e-4 ? "equivalent" : "NOT equivalent";
    $("surgery-out").textContent = `max |adapted - source| = ${dev.toExponential(3)} (${verdict} at 1e-4)`;
  } catch (e) {
    $("surgery-out").textContent = String(e);
  }
}

function costs() {
  try {
    const rows = cost_table(num("max-n"), num("size")).trim().split("\n").map((l) => l.split(","));
    const base = rows[1];
    const fmt = (v) => Number(v).toLocaleString();
    let html = "<tr><th>model</th><th>params</th><th>FLOPs</th><th>params vs single</th><th>FLOPs vs single</th></tr>";
    for (const [name, p, f] of rows.slice(1)) {
      html += `<tr><td>${name}</td><td>${fmt(p)}</td><td>${fmt(f)}</td>` +
        `<td>+${fmt(p - base[1])}</td><td>x${(f / base[2]).toFixed(3)}</td></tr>`;
    }
    $("cost-table").innerHTML = html;
  } catch (e) {
    $("cost-table").textContent = String(e);
  }
}

await init();
$("render").onclick = showStrip;
$("verify").onclick = verify;
$("costs").onclick = costs;
showStrip();
costs();
