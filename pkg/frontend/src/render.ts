/** DOM rendering: scene canvas, dialogue, progress, error panel. */

import { answerClass, sceneLayout } from "./state.js";
import type { ItemView, Progress } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export function renderScene(
  doc: Document,
  item: ItemView,
  onSelect: (candidateId: number) => void,
): { root: SVGSVGElement; highlight: (candidateId: number | null) => void } {
  const layout = sceneLayout(item.scene, item.candidate_ids);
  const svg = doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
  svg.setAttribute("viewBox", `0 0 ${layout.width} ${layout.height}`);
  svg.classList.add("scene");
  const rects = new Map<number, SVGRectElement>();
  for (const box of layout.boxes) {
    const group = doc.createElementNS(SVG_NS, "g");
    group.classList.add(box.candidate ? "candidate" : "filler");
    const rect = doc.createElementNS(SVG_NS, "rect") as SVGRectElement;
    rect.setAttribute("x", String(box.x));
    rect.setAttribute("y", String(box.y));
    rect.setAttribute("width", String(box.w));
    rect.setAttribute("height", String(box.h));
    group.appendChild(rect);
    const text = doc.createElementNS(SVG_NS, "text");
    text.setAttribute("x", String(box.x + 3));
    text.setAttribute("y", String(box.y - 4));
    text.textContent = box.label;
    group.appendChild(text);
    if (box.candidate) {
      rects.set(box.id, rect);
      group.addEventListener("click", () => onSelect(box.id));
    }
    svg.appendChild(group);
  }
  const highlight = (candidateId: number | null) => {
    for (const [id, rect] of rects) {
      rect.classList.toggle("selected", id === candidateId);
    }
  };
  return { root: svg, highlight };
}

export function renderDialogue(doc: Document, item: ItemView): HTMLElement {
  const list = doc.createElement("ol");
  list.className = "dialogue";
  for (const turn of item.dialogue) {
    const li = doc.createElement("li");
    const q = doc.createElement("span");
    q.className = "question";
    q.textContent = turn.question;
    const a = doc.createElement("span");
    a.className = `answer ${answerClass(turn.answer)}`;
    a.textContent = turn.answer;
    li.append(q, " ", a);
    list.appendChild(li);
  }
  return list;
}

export function renderProgress(doc: Document, progress: Progress): HTMLElement {
  const el = doc.createElement("div");
  el.className = "progress";
  el.textContent = `item ${Math.min(progress.answered + 1, progress.total)} of ${progress.total}`;
  return el;
}

export function renderCompletion(doc: Document, progress: Progress): HTMLElement {
  const el = doc.createElement("div");
  el.className = "completion";
  const head = doc.createElement("h2");
  head.textContent = "Session complete";
  const body = doc.createElement("p");
  body.textContent =
    `You answered ${progress.answered} of ${progress.total} items. ` +
    "Thank you; you can close this tab.";
  el.append(head, body);
  return el;
}

export function errorPanel(doc: Document): {
  root: HTMLElement;
  show: (message: string) => void;
  hide: () => void;
} {
  const root = doc.createElement("div");
  root.className = "error-panel";
  root.hidden = true;
  const show = (message: string) => {
    root.textContent = message;
    root.hidden = false;
  };
  const hide = () => {
    root.hidden = true;
  };
  return { root, show, hide };
}
