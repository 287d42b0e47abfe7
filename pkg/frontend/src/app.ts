// DOM layer: renders the controller state and forwards clicks/keys to it.

import { AnnoClient } from "./api.js";
import { AnnotatorController } from "./controller.js";
import { UiSession, labelCounts, labelIdForKey, progressFraction } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function hotkeyHint(labelId: number): string {
  if (labelId < 10) return String(labelId);
  if (labelId < 36) return String.fromCharCode(97 + labelId - 10);
  return "";
}

export class AnnotatorApp {
  private readonly controller: AnnotatorController;

  constructor(private readonly client: AnnoClient, private readonly root: HTMLElement) {
    this.controller = new AnnotatorController(client, (state) => this.render(state));
    document.addEventListener("keydown", (event) => {
      const vocab = this.controller.state.session?.labels.length ?? 0;
      const labelId = labelIdForKey(event.key, vocab);
      if (labelId !== null) void this.controller.chooseLabel(labelId);
    });
  }

  async start(): Promise<void> {
    await this.controller.start();
  }

  private render(state: UiSession): void {
    this.root.replaceChildren();
    if (state.error) this.root.appendChild(this.renderErrorBanner(state));
    if (state.empty) {
      this.root.appendChild(el("p", "empty", "Nothing to annotate."));
      return;
    }
    if (state.session) this.root.appendChild(this.renderProgress(state));
    if (state.done) {
      this.root.appendChild(this.renderCompletion(state));
    } else if (state.current) {
      this.root.appendChild(this.renderRequest(state));
    }
  }

  private renderErrorBanner(state: UiSession): HTMLElement {
    const banner = el("div", "banner");
    banner.appendChild(el("span", undefined, `Connection trouble: ${state.error}`));
    const retry = el("button", "retry", "Retry");
    retry.addEventListener("click", () => void this.controller.retry());
    banner.appendChild(retry);
    return banner;
  }

  private renderProgress(state: UiSession): HTMLElement {
    const session = state.session!;
    const wrap = el("div", "progress");
    wrap.appendChild(el("p", "progress-text",
      `${session.labeled} / ${session.totalClusters} clusters labeled ` +
      `(participant ${session.participantId})`));
    const bar = el("div", "bar");
    const fill = el("div", "fill");
    fill.style.width = `${Math.round(100 * progressFraction(state))}%`;
    bar.appendChild(fill);
    wrap.appendChild(bar);
    const counts = labelCounts(state);
    if (counts.size > 0) {
      const list = el("ul", "tally");
      for (const entry of session.labels) {
        const count = counts.get(entry.id);
        if (count) list.appendChild(el("li", undefined, `${entry.name}: ${count}`));
      }
      wrap.appendChild(list);
    }
    return wrap;
  }

  private renderRequest(state: UiSession): HTMLElement {
    const request = state.current!;
    const card = el("div", "card");
    card.appendChild(el("h2", undefined, `Cluster ${request.clusterId}`));
    if (request.mediaHint) {
      const video = el("video", "preview");
      video.src = this.client.mediaUrl(request.mediaHint);
      video.controls = true;
      video.muted = true;
      // fall back to the metadata card when the preview asset is missing
      video.addEventListener("error", () => {
        video.replaceWith(this.renderClipMeta(request.startS, request.endS,
                                              request.memberCount));
      });
      card.appendChild(video);
    } else {
      card.appendChild(this.renderClipMeta(request.startS, request.endS,
                                           request.memberCount));
    }
    const buttons = el("div", "labels");
    for (const entry of state.session!.labels) {
      const button = el("button", "label");
      button.appendChild(el("span", "hotkey", hotkeyHint(entry.id)));
      button.appendChild(el("span", undefined, entry.name));
      button.addEventListener("click", () => void this.controller.chooseLabel(entry.id));
      buttons.appendChild(button);
    }
    card.appendChild(buttons);
    return card;
  }

  private renderClipMeta(startS: number, endS: number,
                         memberCount: number | null): HTMLElement {
    const meta = el("div", "meta");
    meta.appendChild(el("p", undefined,
      `Clip ${startS.toFixed(1)}s to ${endS.toFixed(1)}s`));
    if (memberCount !== null) {
      meta.appendChild(el("p", undefined, `${memberCount} clips in this cluster`));
    }
    return meta;
  }

  private renderCompletion(state: UiSession): HTMLElement {
    const session = state.session;
    const wrap = el("div", "completion");
    wrap.appendChild(el("h2", undefined, "All clusters labeled"));
    if (session) {
      wrap.appendChild(el("p", undefined,
        `Annotation budget used: ${session.labeled} of ${session.totalClusters} clusters.`));
    }
    return wrap;
  }
}
