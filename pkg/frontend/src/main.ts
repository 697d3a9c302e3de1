/** Interactive annotator flow: pick your id, then guess item by item.
 *
 * Keyboard: digits 1-6 select the numbered candidate, Enter submits.
 * No correctness feedback is ever shown; the study is blind.
 */

import { ApiClient, ApiError, submitWithRetry } from "./api.js";
import {
  errorPanel,
  renderCompletion,
  renderDialogue,
  renderProgress,
  renderScene,
} from "./render.js";
import { Selection, candidateForDigit } from "./state.js";
import type { ItemView, Progress } from "./types.js";
import { PayloadError } from "./validate.js";

interface View {
  item: ItemView;
  selection: Selection;
  highlight: (candidateId: number | null) => void;
}

function start(doc: Document): void {
  const app = doc.getElementById("app");
  if (!app) throw new Error("missing #app root");
  const client = new ApiClient("");
  const errors = errorPanel(doc);
  let view: View | null = null;
  let submitting = false;

  const stop = (message: string) => {
    view = null;
    app.replaceChildren(errors.root);
    errors.show(message);
  };

  const showItem = (item: ItemView, progress: Progress) => {
    const selection = new Selection(item.candidate_ids);
    const scene = renderScene(doc, item, (id) => {
      selection.select(id);
      scene.highlight(id);
    });
    view = { item, selection, highlight: scene.highlight };
    const submit = doc.createElement("button");
    submit.textContent = "Submit guess";
    submit.addEventListener("click", () => void submitCurrent());
    const hint = doc.createElement("p");
    hint.className = "hint";
    hint.textContent =
      "Click the object you think the dialogue is about " +
      "(or press its number), then press Enter.";
    errors.hide();
    app.replaceChildren(
      renderProgress(doc, progress),
      scene.root,
      renderDialogue(doc, item),
      hint,
      submit,
      errors.root,
    );
  };

  const advance = async () => {
    let next;
    try {
      next = await client.nextItem(annotatorId());
    } catch (err) {
      if (err instanceof PayloadError) {
        stop(`The server sent a malformed item: ${err.message}`);
        return;
      }
      stop(String(err instanceof Error ? err.message : err));
      return;
    }
    if (next.done) {
      view = null;
      app.replaceChildren(renderCompletion(doc, next.progress));
      return;
    }
    showItem(next.item, next.progress);
  };

  const submitCurrent = async () => {
    if (!view || submitting) return;
    const chosen = view.selection.selected;
    if (chosen === null) {
      errors.show("Select a candidate first.");
      return;
    }
    submitting = true;
    try {
      await submitWithRetry(client, {
        annotator_id: annotatorId(),
        transcript_id: view.item.transcript_id,
        chosen_candidate_id: chosen,
      });
      await advance();
    } catch (err) {
      if (err instanceof ApiError) {
        errors.show(`The server rejected the guess: ${err.message}`);
      } else {
        errors.show(String(err instanceof Error ? err.message : err));
      }
    } finally {
      submitting = false;
    }
  };

  const annotatorId = (): string =>
    new URLSearchParams(doc.location.search).get("annotator") ?? "";

  doc.addEventListener("keydown", (event) => {
    if (!view) return;
    if (event.key >= "1" && event.key <= "6") {
      const id = candidateForDigit(view.item, Number(event.key));
      if (id !== null) {
        view.selection.select(id);
        view.highlight(id);
      }
    } else if (event.key === "Enter") {
      void submitCurrent();
    }
  });

  if (!annotatorId()) {
    const form = doc.createElement("form");
    const label = doc.createElement("label");
    label.textContent = "Annotator id: ";
    const input = doc.createElement("input");
    input.name = "annotator";
    input.placeholder = "annotator-1";
    input.required = true;
    const go = doc.createElement("button");
    go.textContent = "Start session";
    label.appendChild(input);
    form.append(label, go);
    app.replaceChildren(form);
    return;
  }
  void advance();
}

start(document);
