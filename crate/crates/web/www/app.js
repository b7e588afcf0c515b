import init, { compareMechanisms, solveAllocation, simulateDay } from "./pkg/v2v_web.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#2b6cb0", "#dd6b20", "#38a169", "#805ad5"];

const starter = [
  [1, "buyer", 0.40, 8],
  [2, "buyer", 0.30, 5],
  [3, "seller", 0.20, 6],
  [4, "seller", 0.25, 6],
  [5, "neutral", 0.30, 0],
];

function addRow([id, role, price, qty]) {
  const tr = document.createElement("tr");
  const roles = ["buyer", "seller", "neutral"]
    .map((r) => `<option${r === role ? " selected" : ""}>${r}</option>`)
    .join("");
  tr.innerHTML = `<td>${id}</td><td><select>${roles}</select></td>` +
    `<td><input type="number" step="0.01" value="${price}"></td>` +
    `<td><input type="number" step="0.5" value="${qty}"></td>`;
  $("offers").tBodies[0].appendChild(tr);
}

function readBook() {
  return [...$("offers").tBodies[0].rows].map((tr) => ({
    id: Number(tr.cells[0].textContent),
    role: tr.querySelector("select").value,
    price: Number(tr.cells[2].firstChild.value),
    quantity: Number(tr.cells[3].firstChild.value),
  }));
}

function fail(el, e) {
  el.innerHTML = `<p class="err">${e}</p>`;
}

// grouped bars: one group per metric, one bar per mechanism
function drawBars(canvas, outcomes) {
  const ctx = canvas.getContext("2d");
  const metrics = ["sw", "volume_kwh", "p_match", "jains", "gini"];
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const gw = canvas.width / metrics.length;
  const bw = (gw - 30) / outcomes.length;
  metrics.forEach((m, g) => {
    const max = Math.max(1e-9, ...outcomes.map((o) => o.metrics[m]));
    outcomes.forEach((o, k) => {
      const h = (o.metrics[m] / max) * (canvas.height - 50);
      ctx.fillStyle = COLORS[k];
      ctx.fillRect(g * gw + 15 + k * bw, canvas.height - 30 - h, bw - 2, h);
    });
    ctx.fillStyle = "#222";
    ctx.fillText(m, g * gw + 15, canvas.height - 12);
  });
  outcomes.forEach((o, k) => {
    ctx.fillStyle = COLORS[k];
    ctx.fillText(o.mechanism, 10 + k * 120, 14);
  });
}

function runBook() {
  try {
    const out = JSON.parse(compareMechanisms(JSON.stringify(readBook()), 1));
    drawBars($("bars"), out);
    $("book-out").innerHTML = out
      .map((o) => {
        const trades = o.trades
          .map((t) => `${t.seller}&rarr;${t.buyer} ${t.quantity.toFixed(2)} kWh @ ${t.price.toFixed(3)}`)
          .join(", ");
        return `<p><b>${o.mechanism}</b>: SW ${o.metrics.sw.toFixed(3)}; ${trades || "no trades"}</p>`;
      })
      .join("");
  } catch (e) {
    fail($("book-out"), e);
  }
}

const nums = (s) => s.split(",").map((v) => Number(v.trim()));

function runAlloc() {
  try {
    const surplus = $("surplus").value.split(";").map((row) =>
      row.split(",").map((v) => (v.trim() === "" ? null : Number(v))));
    const input = { buyer_caps: nums($("bcaps").value), seller_caps: nums($("scaps").value), surplus };
    const out = JSON.parse(solveAllocation(JSON.stringify(input)));
    const flows = out.flows.map((r, i) => `buyer ${i}: ` + r.map((x) => x.toFixed(3)).join("  ")).join("\n");
    $("alloc-out").textContent =
      `${flows}\nbuyer utilities ${out.buyer_utils.map((u) => u.toFixed(4))}` +
      `\nseller utilities ${out.seller_utils.map((u) => u.toFixed(4))}` +
      `\nlog welfare ${out.objective.toFixed(5)} after ${out.iterations} iterations`;
  } catch (e) {
    $("alloc-out").textContent = String(e);
  }
}

function drawSeries(canvas, rows) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const series = [["sw", "social welfare"], ["volume_kwh", "volume kWh"], ["p_match", "match rate"]];
  const dx = (canvas.width - 40) / Math.max(1, rows.length - 1);
  series.forEach(([key, label], k) => {
    const max = Math.max(1e-9, ...rows.map((r) => r[key]));
    ctx.strokeStyle = COLORS[k];
    ctx.beginPath();
    rows.forEach((r, i) => {
      const x = 20 + i * dx;
      const y = canvas.height - 20 - (r[key] / max) * (canvas.height - 50);
      i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
    });
    ctx.stroke();
    ctx.fillStyle = COLORS[k];
    ctx.fillText(`${label} (max ${max.toFixed(2)})`, 20 + k * 220, 14);
  });
}

function runDay() {
  try {
    const rows = JSON.parse(simulateDay(Number($("n").value), $("mech").value, Number($("seed").value)));
    drawSeries($("series"), rows);
    const sw = rows.reduce((a, r) => a + r.sw, 0);
    const vol = rows.reduce((a, r) => a + r.volume_kwh, 0);
    $("day-out").innerHTML = `<p>${rows.length} steps, total SW ${sw.toFixed(3)}, volume ${vol.toFixed(1)} kWh</p>`;
  } catch (e) {
    fail($("day-out"), e);
  }
}

await init();
starter.forEach(addRow);
$("add").onclick = () => addRow([$("offers").tBodies[0].rows.length + 1, "buyer", 0.3, 2]);
$("clear").onclick = runBook;
$("solve").onclick = runAlloc;
$("run").onclick = runDay;
runBook();
runAlloc();
runDay();
