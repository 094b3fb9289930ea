import init, { scene_preview, box_overlap, penetration } from "./pkg/icmf_demo.js";

const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#e377c2"];

function fitTransform(canvas, extentX, extentY) {
  const sx = canvas.width / extentX;
  const sy = canvas.height / extentY;
  const s = Math.min(sx, sy) * 0.96;
  return {
    s,
    toPx(x, y) {
      return [canvas.width / 2 + x * s, canvas.height / 2 - y * s];
    },
    fromPx(px, py) {
      return [(px - canvas.width / 2) / s, (canvas.height / 2 - py) / s];
    },
  };
}

function drawBox(ctx, tf, x, y, c, si, w, l, style) {
  const hw = w / 2, hl = l / 2;
  const corners = [[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]].map(([u, v]) => {
    return tf.toPx(x + c * u - si * v, y + si * u + c * v);
  });
  ctx.beginPath();
  corners.forEach(([px, py], i) => (i ? ctx.lineTo(px, py) : ctx.moveTo(px, py)));
  ctx.closePath();
  if (style.fill) { ctx.fillStyle = style.fill; ctx.fill(); }
  if (style.stroke) { ctx.strokeStyle = style.stroke; ctx.lineWidth = style.lw || 1.5; ctx.stroke(); }
  // nose tick
  const [nx, ny] = tf.toPx(x + c * hl, y + si * hl);
  const [cx, cy] = tf.toPx(x, y);
  ctx.beginPath(); ctx.moveTo(cx, cy); ctx.lineTo(nx, ny);
  ctx.strokeStyle = style.stroke || "#333"; ctx.stroke();
}

// ---------------------------------------------------------------- scene view
const sceneCanvas = document.getElementById("scene");
const sceneCtx = sceneCanvas.getContext("2d");
let scene = null;
let tick = 9; // key frame

function loadScene() {
  const kind = document.getElementById("kind").value;
  const seed = BigInt(Math.max(0, +document.getElementById("seed").value | 0));
  const actors = +document.getElementById("actors").value;
  const statics = +document.getElementById("statics").value;
  try {
    scene = scene_preview(kind, seed, actors, statics);
    tick = scene.key_frame;
    drawScene();
    const moving = scene.actors.filter(a => !a.is_static).length;
    document.getElementById("sceneinfo").textContent =
      `${scene.actors.length} actors (${moving} moving)\n` +
      `${scene.points.length} sweep points\n` +
      `extent ${scene.extent[0]}×${scene.extent[1]} m`;
  } catch (e) {
    document.getElementById("sceneinfo").textContent = "generation failed: " + e;
  }
}

function drawScene() {
  if (!scene) return;
  const tf = fitTransform(sceneCanvas, scene.extent[0], scene.extent[1]);
  sceneCtx.clearRect(0, 0, sceneCanvas.width, sceneCanvas.height);
  // map layers
  for (const poly of scene.map) {
    sceneCtx.beginPath();
    poly.vertices.forEach(([x, y], i) => {
      const [px, py] = tf.toPx(x, y);
      i ? sceneCtx.lineTo(px, py) : sceneCtx.moveTo(px, py);
    });
    sceneCtx.closePath();
    sceneCtx.fillStyle = poly.layer === "drivable" ? "#eef2f7"
      : poly.layer === "lane" ? "#e3ecf5" : "#f3e9e1";
    sceneCtx.fill();
  }
  // sweep points
  sceneCtx.fillStyle = "#9aa4bd";
  for (const [x, y] of scene.points) {
    const [px, py] = tf.toPx(x, y);
    sceneCtx.fillRect(px - 1, py - 1, 2, 2);
  }
  // tracks and boxes
  scene.actors.forEach((a, i) => {
    const color = a.is_static ? "#8a8f9c" : PALETTE[i % PALETTE.length];
    if (!a.is_static) {
      sceneCtx.beginPath();
      a.track.forEach(([x, y], t) => {
        const [px, py] = tf.toPx(x, y);
        t ? sceneCtx.lineTo(px, py) : sceneCtx.moveTo(px, py);
      });
      sceneCtx.strokeStyle = color + "66";
      sceneCtx.lineWidth = 1.2;
      sceneCtx.stroke();
    }
    const [x, y, c, s] = a.track[Math.min(tick, a.track.length - 1)];
    drawBox(sceneCtx, tf, x, y, c, s, a.width, a.length, {
      fill: a.class === "static" ? "#c9ccd6" : color + "33",
      stroke: color,
    });
  });
  // tick marker
  sceneCtx.fillStyle = "#333";
  sceneCtx.font = "12px sans-serif";
  const t = (tick - scene.key_frame) / 10;
  sceneCtx.fillText(`t = ${t.toFixed(1)} s`, 10, 16);
}

document.getElementById("regen").onclick = loadScene;
for (const id of ["kind", "seed"]) document.getElementById(id).onchange = loadScene;
for (const [slider, label] of [["actors", "actorsv"], ["statics", "staticsv"]]) {
  document.getElementById(slider).oninput = () => {
    document.getElementById(label).textContent = document.getElementById(slider).value;
    loadScene();
  };
}
let playTimer = null;
document.getElementById("play").onclick = () => {
  if (playTimer) { clearInterval(playTimer); playTimer = null; return; }
  tick = 0;
  playTimer = setInterval(() => {
    tick += 1;
    if (tick >= scene.ticks) { clearInterval(playTimer); playTimer = null; tick = scene.key_frame; }
    drawScene();
  }, 60);
};

// ---------------------------------------------------------------- box overlap
const boxCanvas = document.getElementById("boxes");
const boxCtx = boxCanvas.getContext("2d");
const boxState = {
  a: { x: -1.5, y: 0.2, h: 0.3 },
  b: { x: 1.2, y: -0.4, h: -0.5 },
};

function boxDims() {
  return {
    aw: +document.getElementById("aw").value,
    al: +document.getElementById("al").value,
    bw: +document.getElementById("bw").value,
    bl: +document.getElementById("bl").value,
  };
}

function drawBoxes() {
  const { aw, al, bw, bl } = boxDims();
  const r = box_overlap(
    boxState.a.x, boxState.a.y, boxState.a.h, aw, al,
    boxState.b.x, boxState.b.y, boxState.b.h, bw, bl,
  );
  const tf = fitTransform(boxCanvas, 16, 13);
  boxCtx.clearRect(0, 0, boxCanvas.width, boxCanvas.height);
  const poly = (corners, fill, stroke) => {
    boxCtx.beginPath();
    corners.forEach(([x, y], i) => {
      const [px, py] = tf.toPx(x, y);
      i ? boxCtx.lineTo(px, py) : boxCtx.moveTo(px, py);
    });
    boxCtx.closePath();
    if (fill) { boxCtx.fillStyle = fill; boxCtx.fill(); }
    boxCtx.strokeStyle = stroke; boxCtx.lineWidth = 2; boxCtx.stroke();
  };
  poly(r.corners_a, "#1f77b422", "#1f77b4");
  poly(r.corners_b, "#d6272822", "#d62728");
  // intersection area by overlaying both fills is implicit; report numbers:
  document.getElementById("boxinfo").textContent =
    `IoU          ${r.iou.toFixed(4)}\n` +
    `IoP (A→B)    ${r.iop_a_over_b.toFixed(4)}\n` +
    `IoP (B→A)    ${r.iop_b_over_a.toFixed(4)}\n` +
    `∩ area       ${r.intersection_area.toFixed(3)} m²\n` +
    `overlap(>.05) ${r.iop_a_over_b > 0.05 || r.iop_b_over_a > 0.05 ? "yes" : "no"}`;
}

function attachDrag(canvas, extent, pick, move) {
  let active = null;
  const tfOf = () => fitTransform(canvas, extent[0], extent[1]);
  canvas.addEventListener("pointerdown", (e) => {
    const rect = canvas.getBoundingClientRect();
    const [x, y] = tfOf().fromPx(e.clientX - rect.left, e.clientY - rect.top);
    active = pick(x, y);
    if (active) canvas.setPointerCapture(e.pointerId);
  });
  canvas.addEventListener("pointermove", (e) => {
    if (!active) return;
    const rect = canvas.getBoundingClientRect();
    const [x, y] = tfOf().fromPx(e.clientX - rect.left, e.clientY - rect.top);
    move(active, x, y);
  });
  canvas.addEventListener("pointerup", () => (active = null));
}

attachDrag(boxCanvas, [16, 13],
  (x, y) => {
    for (const k of ["a", "b"]) {
      const s = boxState[k];
      const { al, bl } = boxDims();
      const len = k === "a" ? al : bl;
      const nx = s.x + Math.cos(s.h) * len / 2;
      const ny = s.y + Math.sin(s.h) * len / 2;
      if (Math.hypot(x - nx, y - ny) < 0.6) return { k, mode: "rot" };
      if (Math.hypot(x - s.x, y - s.y) < Math.max(1.2, len / 2)) return { k, mode: "move" };
    }
    return null;
  },
  (act, x, y) => {
    const s = boxState[act.k];
    if (act.mode === "move") { s.x = x; s.y = y; }
    else s.h = Math.atan2(y - s.y, x - s.x);
    drawBoxes();
  });
for (const id of ["aw", "al", "bw", "bl"]) document.getElementById(id).oninput = drawBoxes;

// ------------------------------------------------------------- penetration
const penCanvas = document.getElementById("pen");
const penCtx = penCanvas.getContext("2d");
const penState = { x: -4.5, y: 0.6 };
const OBST = { x: 2.5, y: 0.0, h: 0.0, w: 2.2, l: 4.6 };

function drawPen() {
  const h = +document.getElementById("ph").value;
  const l = +document.getElementById("pl").value;
  const r = penetration(penState.x, penState.y, h, 2.0, l, OBST.x, OBST.y, OBST.h, OBST.w, OBST.l);
  const tf = fitTransform(penCanvas, 20, 16);
  penCtx.clearRect(0, 0, penCanvas.width, penCanvas.height);
  // obstacle
  penCtx.beginPath();
  r.obstacle_corners.forEach(([x, y], i) => {
    const [px, py] = tf.toPx(x, y);
    i ? penCtx.lineTo(px, py) : penCtx.moveTo(px, py);
  });
  penCtx.closePath();
  penCtx.fillStyle = "#c9ccd6"; penCtx.fill();
  penCtx.strokeStyle = "#8a8f9c"; penCtx.stroke();
  // actor box
  drawBox(penCtx, tf, penState.x, penState.y, Math.cos(h), Math.sin(h), 2.0, l,
    { fill: "#1f77b422", stroke: "#1f77b4", lw: 2 });
  // costing circles
  for (const c of r.circles) {
    const [px, py] = tf.toPx(c.x, c.y);
    penCtx.beginPath();
    penCtx.arc(px, py, c.r * tf.s, 0, Math.PI * 2);
    penCtx.strokeStyle = c.hinge > 0 ? "#d62728" : "#2ca02c";
    penCtx.lineWidth = 2;
    penCtx.stroke();
  }
  // negative gradient arrow (descent direction), scaled for visibility
  const g = r.grad;
  const mag = Math.hypot(g[0], g[1]);
  if (mag > 1e-9) {
    const scale = 3.0 / Math.max(mag, 0.2);
    const [x0, y0] = tf.toPx(penState.x, penState.y);
    const [x1, y1] = tf.toPx(penState.x - g[0] * scale, penState.y - g[1] * scale);
    penCtx.beginPath(); penCtx.moveTo(x0, y0); penCtx.lineTo(x1, y1);
    penCtx.strokeStyle = "#d62728"; penCtx.lineWidth = 3; penCtx.stroke();
    const ang = Math.atan2(y1 - y0, x1 - x0);
    penCtx.beginPath();
    penCtx.moveTo(x1, y1);
    penCtx.lineTo(x1 - 10 * Math.cos(ang - 0.5), y1 - 10 * Math.sin(ang - 0.5));
    penCtx.lineTo(x1 - 10 * Math.cos(ang + 0.5), y1 - 10 * Math.sin(ang + 0.5));
    penCtx.closePath(); penCtx.fillStyle = "#d62728"; penCtx.fill();
  }
  const dists = r.circles.map(c => c.distance.toFixed(2)).join(", ");
  document.getElementById("peninfo").textContent =
    `loss          ${r.loss.toFixed(4)}\n` +
    `d per circle  [${dists}]\n` +
    `∂loss/∂x,y    (${g[0].toFixed(3)}, ${g[1].toFixed(3)})\n` +
    `∂loss/∂θ      ${g[2].toFixed(3)}`;
}

attachDrag(penCanvas, [20, 16],
  (x, y) => (Math.hypot(x - penState.x, y - penState.y) < 3.5 ? { k: "actor" } : null),
  (_, x, y) => { penState.x = x; penState.y = y; drawPen(); });
for (const id of ["ph", "pl"]) document.getElementById(id).oninput = drawPen;

// ---------------------------------------------------------------- bootstrap
init().then(() => {
  document.getElementById("loading").style.display = "none";
  document.getElementById("app").style.display = "block";
  loadScene();
  drawBoxes();
  drawPen();
}).catch((e) => {
  document.getElementById("loading").textContent =
    "failed to load wasm module — run build.sh first (" + e + ")";
});
