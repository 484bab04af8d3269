// Browser wiring: a plain lat/lon canvas map with a control bar. Add an
// event by drawing a circle, drop an officer with a click, drag officers to
// reposition them; incoming detections show red, locally produced
// threatening events black, and each officer's go/stay decision pops up.

import { IslandClient, SseClient } from "./api.js";
import { ConsoleController, MapEntity, Popup } from "./controller.js";

const params = new URLSearchParams(location.search);
const islandBase = params.get("island") ?? "http://127.0.0.1:19002";
const locationFeedUrl = params.get("feed") ?? "http://127.0.0.1:19022/";

// map viewport around the demo areas (plain lat/lon plotting)
const VIEW = { x0: 33.6, y0: -117.93, x1: 33.72, y1: -117.75 };

const canvas = document.getElementById("map") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusLine = document.getElementById("status")!;
const popupHost = document.getElementById("popups")!;
const modeButtons = {
  navigate: document.getElementById("mode-navigate") as HTMLButtonElement,
  event: document.getElementById("mode-event") as HTMLButtonElement,
  officer: document.getElementById("mode-officer") as HTMLButtonElement,
};

type Mode = keyof typeof modeButtons;
let mode: Mode = "navigate";

const client = new IslandClient(islandBase);
const controller = new ConsoleController(client, {
  locationFeedUrl,
  seed: Number(params.get("seed") ?? 20),
});
controller.onChange = render;

function toPixel(x: number, y: number): [number, number] {
  const px = ((y - VIEW.y0) / (VIEW.y1 - VIEW.y0)) * canvas.width;
  const py = canvas.height - ((x - VIEW.x0) / (VIEW.x1 - VIEW.x0)) * canvas.height;
  return [px, py];
}

function toWorld(px: number, py: number): [number, number] {
  const y = VIEW.y0 + (px / canvas.width) * (VIEW.y1 - VIEW.y0);
  const x = VIEW.x0 + ((canvas.height - py) / canvas.height) * (VIEW.x1 - VIEW.x0);
  return [x, y];
}

function render(): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#10131a";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#232a38";
  for (let i = 1; i < 12; i++) {
    ctx.beginPath();
    ctx.moveTo((canvas.width / 12) * i, 0);
    ctx.lineTo((canvas.width / 12) * i, canvas.height);
    ctx.moveTo(0, (canvas.height / 12) * i);
    ctx.lineTo(canvas.width, (canvas.height / 12) * i);
    ctx.stroke();
  }
  for (const entity of controller.entities.values()) drawEntity(entity);
  renderPopups();
}

function drawEntity(entity: MapEntity): void {
  const [px, py] = toPixel(entity.x, entity.y);
  if (entity.kind === "event_circle") {
    const edge = toPixel(entity.x, entity.y + (entity.radiusKm ?? 1) / 100);
    const radius = Math.abs(edge[0] - px);
    ctx.strokeStyle = "#d9a521";
    ctx.beginPath();
    ctx.arc(px, py, radius, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.fillStyle = "#d9a521";
    ctx.fillText(entity.label ?? "", px + 4, py - 4);
    return;
  }
  if (entity.kind === "tweet" || entity.kind === "threatening_event") {
    ctx.fillStyle = entity.kind === "tweet" ? "#e23b3b" : "#0c0d0f";
    ctx.strokeStyle = entity.kind === "tweet" ? "#e23b3b" : "#dfe5f1";
    ctx.beginPath();
    ctx.moveTo(px, py - 7);
    ctx.lineTo(px + 6, py + 5);
    ctx.lineTo(px - 6, py + 5);
    ctx.closePath();
    ctx.fill();
    ctx.stroke();
    return;
  }
  ctx.fillStyle = "#3f8cff";
  ctx.beginPath();
  ctx.arc(px, py, 6, 0, 2 * Math.PI);
  ctx.fill();
  ctx.fillStyle = "#bcd2f7";
  ctx.fillText(entity.label ?? "", px + 8, py + 3);
}

function renderPopups(): void {
  const recent = controller.popups.slice(-4);
  popupHost.replaceChildren(
    ...recent.map((popup: Popup) => {
      const div = document.createElement("div");
      div.className = "popup";
      div.textContent =
        `officer ${popup.officerId}: threatening event "${popup.tweetText}" — ` +
        (popup.decision === "go" ? "moving in" : "holding position");
      return div;
    }),
  );
}

// -- pointer handling -----------------------------------------------------------

let draggingOfficer: number | null = null;
let circleStart: [number, number] | null = null;

canvas.addEventListener("mousedown", (event) => {
  const [x, y] = toWorld(event.offsetX, event.offsetY);
  if (mode === "event") {
    circleStart = [x, y];
    return;
  }
  if (mode === "officer") {
    void controller.addOfficer(x, y);
    return;
  }
  for (const officer of controller.officers.values()) {
    const [px, py] = toPixel(officer.x, officer.y);
    if (Math.hypot(px - event.offsetX, py - event.offsetY) < 10) {
      draggingOfficer = officer.oid;
      return;
    }
  }
});

canvas.addEventListener("mouseup", (event) => {
  const [x, y] = toWorld(event.offsetX, event.offsetY);
  if (mode === "event" && circleStart) {
    const radiusKm =
      Math.hypot(x - circleStart[0], y - circleStart[1]) * 100;
    if (radiusKm > 0) {
      void controller.addEvent(circleStart[0], circleStart[1], radiusKm);
    }
    circleStart = null;
    return;
  }
  if (draggingOfficer !== null) {
    void controller.dragOfficer(draggingOfficer, x, y);
    draggingOfficer = null;
  }
});

for (const [name, button] of Object.entries(modeButtons)) {
  button.addEventListener("click", () => {
    mode = name as Mode;
    for (const other of Object.values(modeButtons)) other.classList.remove("active");
    button.classList.add("active");
  });
}

// -- live stream and loops ----------------------------------------------------------

const sse = new SseClient(
  `${islandBase}/events`,
  (type, data) => controller.handleEvent(type, data),
  { onStatus: (state) => (statusLine.textContent = `events: ${state}`) },
);

async function start(): Promise<void> {
  statusLine.textContent = `connecting to ${islandBase} ...`;
  await controller.setup();
  sse.start();
  await controller.reconcile();
  setInterval(() => void controller.tick(), 1000);
  setInterval(() => void controller.reconcile(), 15000);
  statusLine.textContent = `console on ${islandBase}`;
  render();
}

void start();
