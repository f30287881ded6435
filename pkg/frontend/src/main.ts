/** DOM wiring for the alignment UI. */

import { AlignClient } from "./api.js";
import { AlignmentController } from "./controller.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function formatPose(pose: number[][] | null): string {
  if (!pose) return "(no session)";
  return pose.map((row) => row.map((v) => v.toFixed(6)).join("  ")).join("\n");
}

function main(): void {
  const client = new AlignClient(window.location.origin);
  const controller = new AlignmentController(client);

  const view = el<HTMLImageElement>("view");
  const status = el<HTMLElement>("status");
  const poseBox = el<HTMLElement>("pose");
  const history = el<HTMLElement>("history");
  const previewBox = el<HTMLElement>("preview");
  const alphaSlider = el<HTMLInputElement>("alpha");
  const modeSelect = el<HTMLSelectElement>("mode");
  const swapToggle = el<HTMLInputElement>("swap");
  const operatorInput = el<HTMLInputElement>("operator");

  controller.onChange(() => {
    if (controller.state.sessionId) {
      view.src = controller.renderUrl();
    }
    poseBox.textContent = formatPose(controller.state.pose);
    status.textContent = controller.state.lastError ?? "ok";
    status.className = controller.state.lastError ? "error" : "";
    history.innerHTML = controller.state.commits
      .map((c) => `<li>#${c.index} ${c.operator}</li>`)
      .join("");
    const p = controller.state.preview;
    previewBox.textContent = p
      ? `occluded ${p.occluded_percent.toFixed(2)} %, valid ${p.valid_percent.toFixed(1)} %` +
        (p.depth ? `, depth ${p.depth.minimum.toFixed(1)}..${p.depth.maximum.toFixed(1)} mm` : "")
      : "";
  });

  el<HTMLFormElement>("connect-form").addEventListener("submit", (ev) => {
    ev.preventDefault();
    controller
      .connect({
        mesh_path: el<HTMLInputElement>("mesh-path").value,
        calib_path: el<HTMLInputElement>("calib-path").value,
        left_image_path: el<HTMLInputElement>("left-path").value,
        right_image_path: el<HTMLInputElement>("right-path").value,
        markers_path: el<HTMLInputElement>("markers-path").value || null,
      })
      .catch((err) => {
        status.textContent = String(err);
        status.className = "error";
      });
  });

  window.addEventListener("keydown", (ev) => {
    if (document.activeElement instanceof HTMLInputElement) return;
    const sent = controller.handleKey(ev.key, ev.shiftKey ? true : controller.state.fine);
    if (sent) {
      ev.preventDefault();
      sent.catch(() => undefined); // surfaced through state.lastError
    }
  });

  alphaSlider.addEventListener("input", () => {
    controller.setAlpha(Number(alphaSlider.value));
  });
  modeSelect.addEventListener("change", () => {
    controller.setMode(modeSelect.value as "solid" | "wireframe" | "points");
  });
  swapToggle.addEventListener("change", () => controller.toggleSwap());
  el<HTMLInputElement>("fine").addEventListener("change", (ev) => {
    controller.setFine((ev.target as HTMLInputElement).checked);
  });
  el<HTMLButtonElement>("commit").addEventListener("click", () => {
    controller.commit(operatorInput.value || "anonymous").catch((err) => {
      status.textContent = String(err);
      status.className = "error";
    });
  });
  el<HTMLButtonElement>("preview-btn").addEventListener("click", () => {
    controller.refreshPreview().catch((err) => {
      status.textContent = String(err);
      status.className = "error";
    });
  });
}

window.addEventListener("DOMContentLoaded", main);
