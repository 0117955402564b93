/** DOM wiring: canvas-less viewer around an <img>, driven by FrameLoop. */

import { RenderClient } from "./api.js";
import {
  applyKey,
  defaultState,
  frontView,
  topDownView,
} from "./camera.js";
import { rotate } from "./camera.js";
import { FrameLoop } from "./loop.js";
import type { AppearanceKey, ViewState } from "./types.js";

const base = (document.querySelector("meta[name=service-url]") as HTMLMetaElement)
  ?.content ?? "http://127.0.0.1:8600";
const client = new RenderClient(base);

const img = document.getElementById("frame") as HTMLImageElement;
const hud = document.getElementById("hud") as HTMLElement;
const markerBtn = document.getElementById("markers") as HTMLButtonElement;
const frontBtn = document.getElementById("front") as HTMLButtonElement;
const topBtn = document.getElementById("topdown") as HTMLButtonElement;
const appearanceSel = document.getElementById("appearance") as HTMLSelectElement;
const trajectorySel = document.getElementById("trajectory") as HTMLSelectElement;

let state: ViewState;
let objectUrl = "";

const loop = new FrameLoop(
  (body) => client.render(body),
  (frame) => {
    const blob = new Blob([frame.bytes as BlobPart], { type: "image/png" });
    const next = URL.createObjectURL(blob);
    img.src = next;
    if (objectUrl) URL.revokeObjectURL(objectUrl);
    objectUrl = next;
    const s = frame.state;
    hud.textContent =
      `pos (${s.x.toFixed(1)}, ${s.y.toFixed(1)}, ${s.z.toFixed(1)})  ` +
      `yaw ${s.yawDeg.toFixed(0)}°  pitch ${s.pitchDeg.toFixed(0)}°  ` +
      `${frame.width}x${frame.height}  ${frame.roundTripMs.toFixed(0)} ms`;
  },
  { budgetMs: 1000 },
);

function update(next: ViewState): void {
  state = next;
  loop.request(state);
}

async function start(): Promise<void> {
  const info = await client.info();
  const trajListing = await client.trajectories();

  for (const [trip, cam] of info.sequences) {
    const opt = document.createElement("option");
    opt.value = `${trip}|${cam}`;
    opt.textContent = `${trip} / ${cam}`;
    appearanceSel.appendChild(opt);
  }
  const avg = document.createElement("option");
  avg.value = "average";
  avg.textContent = "average style";
  appearanceSel.appendChild(avg);

  for (const t of trajListing.trajectories) {
    const opt = document.createElement("option");
    opt.value = t.id;
    opt.textContent = t.id;
    trajectorySel.appendChild(opt);
  }

  const firstKey: AppearanceKey = info.sequences.length
    ? [info.sequences[0][0], info.sequences[0][1]] : "average";
  state = defaultState(firstKey);
  if (trajListing.trajectories.length) {
    state.trajectoryId = trajListing.trajectories[0].id;
  }
  update(state);

  window.addEventListener("keydown", (ev) => {
    const next = applyKey(state, ev.key);
    if (next !== state) {
      ev.preventDefault();
      update(next);
    }
  });

  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  img.addEventListener("mousedown", (ev) => {
    dragging = true;
    lastX = ev.clientX;
    lastY = ev.clientY;
  });
  window.addEventListener("mouseup", () => { dragging = false; });
  window.addEventListener("mousemove", (ev) => {
    if (!dragging) return;
    const dx = ev.clientX - lastX;
    const dy = ev.clientY - lastY;
    lastX = ev.clientX;
    lastY = ev.clientY;
    update(rotate(state, -0.4 * dx, 0.4 * dy));
  });

  markerBtn.addEventListener("click", () => {
    update({ ...state, markersOn: !state.markersOn });
  });
  frontBtn.addEventListener("click", () => update(frontView(state)));
  topBtn.addEventListener("click", () => update(topDownView(state)));
  appearanceSel.addEventListener("change", () => {
    const v = appearanceSel.value;
    const key: AppearanceKey = v === "average"
      ? "average" : (v.split("|") as [string, string]);
    update({ ...state, appearanceKey: key });
  });
  trajectorySel.addEventListener("change", () => {
    update({ ...state, trajectoryId: trajectorySel.value });
  });
}

start().catch((err) => {
  hud.textContent = `failed to reach render service at ${base}: ${err}`;
});
