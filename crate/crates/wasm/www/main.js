import init, { Demo, sceneNames } from "./pkg/anchorview_wasm.js";

const W = 640, H = 480;
const $ = (id) => document.getElementById(id);
let demo = null;

const defaultObjectives = {
  cup_and_can: { anchor_id: "cup", target_center: [320, 240], secondary: [{ object_id: "can", region: "quadrant(upper-right)" }] },
  banana_table: { anchor_id: "banana", target_center: [213, 160], target_scale: 0.25 },
  open_box: { anchor_id: "box", target_center: [320, 240], target_scale: 0.5 },
};

function paint(canvas, rgba, w = W, h = H) {
  const ctx = canvas.getContext("2d");
  const img = new ImageData(new Uint8ClampedArray(rgba), w, h);
  if (canvas.width === w) {
    ctx.putImageData(img, 0, 0);
    return;
  }
  const tmp = new OffscreenCanvas(w, h);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function cross(canvas, u, v, color) {
  const ctx = canvas.getContext("2d");
  ctx.strokeStyle = color;
  ctx.beginPath();
  ctx.moveTo(u - 8, v); ctx.lineTo(u + 8, v);
  ctx.moveTo(u, v - 8); ctx.lineTo(u, v + 8);
  ctx.stroke();
}

function orbitParams() {
  return {
    anchor: $("anchor").value,
    rho: parseFloat($("rho").value),
    theta: parseFloat($("theta").value),
    phi: parseFloat($("phi").value),
  };
}

function drawOrbit() {
  const p = orbitParams();
  $("rho-v").textContent = p.rho.toFixed(2);
  $("theta-v").textContent = p.theta;
  $("phi-v").textContent = p.phi;
  try {
    paint($("orbit"), demo.renderOrbit(p.anchor, p.rho, p.theta, p.phi));
  } catch (e) {
    console.warn(e);
  }
}

function solveAt(u, v) {
  const p = orbitParams();
  const s = parseFloat($("scale").value);
  try {
    const out = JSON.parse(demo.solve(p.anchor, u, v, s, p.theta, p.phi, p.rho));
    paint($("solve-start"), demo.renderPose(new Float64Array(out.start)));
    paint($("solve-out"), demo.renderPose(new Float64Array(out.pose)));
    cross($("solve-out"), u, v, "#d22");
    $("solve-log").textContent =
      `servo iterations: ${out.iterations}\nresidual: ${out.residual.map((x) => x.toFixed(3)).join(", ")} px\n` +
      `per-step anchor shift (px): ${out.shifts.map((x) => x.toFixed(1)).join(", ")}`;
  } catch (e) {
    $("solve-log").textContent = String(e.message ?? e);
  }
}

function runReflect() {
  const p = orbitParams();
  const out = $("reflect-out");
  out.innerHTML = "";
  try {
    const res = JSON.parse(demo.reflect($("objective").value, p.rho, p.theta, p.phi, parseInt($("kiters").value, 10)));
    res.iterations.forEach((it, t) => {
      const h = document.createElement("h3");
      h.textContent = `iteration ${t} (gain ${it.gain.toFixed(3)})`;
      out.appendChild(h);
      const grid = document.createElement("div");
      grid.className = "thumbs";
      it.candidates.forEach((c, i) => {
        const cell = document.createElement("div");
        cell.className = "thumb" + (i === it.best ? " best" : "");
        const cv = document.createElement("canvas");
        cv.width = 160; cv.height = 120;
        paint(cv, demo.renderPose(new Float64Array(c.pose)));
        cell.appendChild(cv);
        const cap = document.createElement("div");
        cap.textContent = `${c.axis}  ${c.score.toFixed(3)}`;
        cap.title = c.rationale;
        cell.appendChild(cap);
        grid.appendChild(cell);
      });
      out.appendChild(grid);
    });
    $("reflect-log").textContent =
      `termination: ${res.termination}\nbest score: ${res.score.toFixed(3)} (${res.rationale})`;
  } catch (e) {
    $("reflect-log").textContent = String(e.message ?? e);
  }
}

function loadScene(name) {
  demo = new Demo(name, W, H);
  const anchor = $("anchor");
  anchor.innerHTML = "";
  for (const id of demo.objectIds()) anchor.add(new Option(id, id));
  const obj = defaultObjectives[name];
  if (obj) {
    anchor.value = obj.anchor_id;
    $("objective").value = JSON.stringify(obj, null, 2);
  }
  drawOrbit();
  solveAt(W / 2, H / 2);
}

await init();
for (const n of sceneNames()) $("scene").add(new Option(n, n));
$("scene").value = "cup_and_can";
$("scene").addEventListener("change", (e) => loadScene(e.target.value));
for (const id of ["anchor", "rho", "theta", "phi"]) $(id).addEventListener("input", drawOrbit);
$("solve-out").addEventListener("click", (e) => {
  const r = e.target.getBoundingClientRect();
  solveAt((e.clientX - r.left) * (W / r.width), (e.clientY - r.top) * (H / r.height));
});
$("run-reflect").addEventListener("click", runReflect);
loadScene("cup_and_can");
