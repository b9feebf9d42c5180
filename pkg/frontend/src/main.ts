// Browser bootstrap: wires the session to the canvas, sidebar and keyboard.

import { ReviewApi } from "./api.js";
import { handleKey, CLASS_KEYS, DIFFICULTY_KEYS } from "./keyboard.js";
import { fitToBox, taskBox, zoomAt, pan } from "./overlay.js";
import { draw } from "./render.js";
import { ReviewSession } from "./session.js";
import { ERROR_CLASSES, DIFFICULTIES } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(location.search);
  const annotator = params.get("annotator") ?? prompt("annotator id") ?? "anonymous";
  const api = new ReviewApi("");
  const session = new ReviewSession(api, annotator);

  const canvas = el<HTMLCanvasElement>("view");
  const sidebar = el<HTMLDivElement>("sidebar");
  const status = el<HTMLDivElement>("status");
  let image: HTMLImageElement | null = null;

  function redraw(): void {
    if (!session.state) {
      status.textContent = session.status === "done" ? "All tasks reviewed. Thanks!" : "";
      sidebar.innerHTML = "";
      canvas.getContext("2d")?.clearRect(0, 0, canvas.width, canvas.height);
      return;
    }
    const s = session.state;
    if (!s.view) s.view = fitToBox(taskBox(s.task.overlay), canvas.width, canvas.height);
    draw(canvas, s, image, s.view);
    renderSidebar();
  }

  function renderSidebar(): void {
    const s = session.state;
    if (!s) return;
    const joint = s.selectedJoint;
    const names = s.task.overlay.joint_names;
    const classButtons = ERROR_CLASSES.map((cls) => {
      const on = s.selections.get(joint)?.has(cls) ? "on" : "";
      const key = Object.entries(CLASS_KEYS).find(([, c]) => c === cls)?.[0] ?? "";
      return `<button class="cls ${on}" data-cls="${cls}">[${key}] ${cls.replace(/_/g, " ")}</button>`;
    }).join("");
    const difficultyButtons = DIFFICULTIES.map((d) => {
      const on = s.difficulty === d ? "on" : "";
      const key = Object.entries(DIFFICULTY_KEYS).find(([, v]) => v === d)?.[0] ?? "";
      return `<button class="diff ${on}" data-diff="${d}">[${key}] ${d}</button>`;
    }).join("");
    sidebar.innerHTML = `
      <h3>${s.task.pose_id} <small>(${s.task.source})</small></h3>
      <p>joint <b>${joint}</b>: ${names[joint]} &nbsp; <small>[ / ] to cycle, digits to jump</small></p>
      <div>${classButtons}</div>
      <p>pose difficulty</p>
      <div>${difficultyButtons}</div>
      <p><input id="free-text" placeholder="notes (optional)" value="${s.freeText}"></p>
      <button id="submit" ${session.canSubmit ? "" : "disabled"}>[Enter] submit</button>
      <p class="error">${session.lastError ?? ""}</p>
      <p>reviewed: ${session.submitted.length} verdicts</p>`;
    sidebar.querySelectorAll<HTMLButtonElement>("button.cls").forEach((b) =>
      b.addEventListener("click", () => {
        session.toggleOnSelected(b.dataset.cls as never);
        redraw();
      }),
    );
    sidebar.querySelectorAll<HTMLButtonElement>("button.diff").forEach((b) =>
      b.addEventListener("click", () => {
        session.setDifficulty(b.dataset.diff as never);
        redraw();
      }),
    );
    el<HTMLInputElement>("free-text").addEventListener("change", (e) => {
      session.setFreeText((e.target as HTMLInputElement).value);
    });
    el<HTMLButtonElement>("submit").addEventListener("click", () => submit());
  }

  async function submit(): Promise<void> {
    if (!session.canSubmit) return;
    await session.submit();
    await loadImage();
    redraw();
  }

  async function loadImage(): Promise<void> {
    image = null;
    const task = session.task;
    if (!task) return;
    const img = new Image();
    img.src = api.imageUrl(task.image_id);
    try {
      await img.decode();
      image = img;
    } catch {
      image = null; // placeholder path: overlay still renders; skip allowed
    }
  }

  document.addEventListener("keydown", (e) => {
    if ((e.target as HTMLElement)?.tagName === "INPUT") return;
    if (e.key === "+") {
      if (session.state?.view) session.state.view = zoomAt(session.state.view, 1.25, canvas.width / 2, canvas.height / 2);
    } else if (e.key === "-") {
      if (session.state?.view) session.state.view = zoomAt(session.state.view, 0.8, canvas.width / 2, canvas.height / 2);
    } else if (e.key.startsWith("Arrow")) {
      const d = 40;
      const dx = e.key === "ArrowLeft" ? d : e.key === "ArrowRight" ? -d : 0;
      const dy = e.key === "ArrowUp" ? d : e.key === "ArrowDown" ? -d : 0;
      if (session.state?.view) session.state.view = pan(session.state.view, dx, dy);
    } else {
      const result = handleKey(session, e.key);
      if (result.submitted) {
        void result.submitted.then(async () => {
          await loadImage();
          redraw();
        });
        return;
      }
      if (!result.handled) return;
    }
    e.preventDefault();
    redraw();
  });

  status.textContent = `annotator: ${annotator}`;
  await session.start();
  await loadImage();
  redraw();
}

void boot();
