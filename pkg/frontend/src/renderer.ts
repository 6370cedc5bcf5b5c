// DOM rendering: the display area is built from the server's rendered layout
// tree; display_update events mutate it in place. The chat area renders the
// message history, the roster shows who is present.
//
// No client state survives that is not reconstructible from
// (layout, history, display updates): rebuilding from a fresh room_state
// yields the same DOM as having applied every event live.

import { renderMarkdown, escapeHtml } from "./markdown.js";
import { ActorRef, EventFrame, Member, RenderedLayout, RenderedNode } from "./protocol.js";

const TAG_FOR_KIND: Record<string, string> = {
  div: "div",
  span: "span",
  p: "p",
  br: "br",
  button: "button",
  image: "img",
  "audio controls": "audio",
  "video controls": "video",
};

// attributes that could smuggle script are never set
function safeAttribute(name: string, value: string): boolean {
  if (name.toLowerCase().startsWith("on")) return false;
  if (/^(src|href)$/i.test(name) && /^\s*javascript:/i.test(value)) return false;
  return true;
}

function buildNode(doc: Document, node: RenderedNode): HTMLElement {
  const tag = TAG_FOR_KIND[node.kind] ?? "div";
  const el = doc.createElement(tag);
  el.setAttribute("data-kind", node.kind);
  if (node.kind === "audio controls" || node.kind === "video controls") {
    el.setAttribute("controls", "");
  }
  if (node.id !== null) el.id = node.id;
  if (node.style !== null) el.setAttribute("style", node.style);
  if (node.src !== null && safeAttribute("src", node.src)) el.setAttribute("src", node.src);
  if (node.autoplay) el.setAttribute("autoplay", "");
  if (node.class !== null) el.setAttribute("class", node.class);
  for (const [name, value] of Object.entries(node.attributes)) {
    if (safeAttribute(name, String(value))) el.setAttribute(name, String(value));
  }
  if (node.text !== null) el.textContent = node.text;
  if (!node.visible) (el as HTMLElement).style.display = "none";
  for (const child of node.children) {
    el.appendChild(buildNode(doc, child));
  }
  return el;
}

export function renderLayout(doc: Document, layout: RenderedLayout): HTMLElement {
  const root = doc.createElement("div");
  root.className = "display-root";
  for (const node of layout.elements) {
    root.appendChild(buildNode(doc, node));
  }
  return root;
}

export function applyDisplayUpdate(
  root: HTMLElement,
  payload: { element_id?: string; mutation?: string; value?: unknown },
): void {
  if (!payload.element_id || !payload.mutation) return; // e.g. video session refs
  const selector = `[id="${payload.element_id.replace(/\\/g, "\\\\").replace(/"/g, '\\"')}"]`;
  const el = root.querySelector<HTMLElement>(selector);
  if (!el) return;
  const value = payload.value;
  switch (payload.mutation) {
    case "set_text":
      el.textContent = String(value ?? "");
      break;
    case "set_image_src":
      if (safeAttribute("src", String(value))) el.setAttribute("src", String(value ?? ""));
      break;
    case "set_attribute": {
      const attr = value as { name: string; value: string };
      if (attr && safeAttribute(attr.name, String(attr.value))) {
        el.setAttribute(attr.name, String(attr.value));
      }
      break;
    }
    case "set_class":
      el.setAttribute("class", String(value ?? ""));
      break;
    case "set_visible":
      el.style.display = value ? "" : "none";
      break;
  }
}

export interface HistoryOptions {
  selfId: number;
  markdown: boolean;
  showImages: boolean;
}

export class HistoryView {
  constructor(private container: HTMLElement, private options: HistoryOptions) {}

  clear(): void {
    this.container.textContent = "";
  }

  // own live frames are skipped: what the user sent is echoed locally on the
  // receipt (the relay experiments deliver nothing back to the sender)
  addFrame(frame: EventFrame): void {
    if (frame.actor.id === this.options.selfId) return;
    if (frame.type === "text_message") {
      this.addText(frame.actor, frame.payload.text, frame.receiver !== undefined);
    } else if (frame.type === "image_message" && this.options.showImages) {
      this.addImage(frame.actor, frame.payload.url);
    } else if (frame.type === "code_issued") {
      this.addText(frame.actor, `Your completion code: ${frame.payload.code}`, true);
    }
  }

  // history replay renders everything, own messages included
  addHistoryFrame(frame: EventFrame): void {
    if (frame.type === "text_message") {
      this.addText(frame.actor, frame.payload.text, frame.receiver !== undefined,
        frame.actor.id === this.options.selfId);
    } else if (frame.type === "image_message" && this.options.showImages) {
      this.addImage(frame.actor, frame.payload.url);
    } else if (frame.type === "code_issued") {
      this.addText(frame.actor, `Your completion code: ${frame.payload.code}`, true);
    }
  }

  addOwn(text: string, isPrivate: boolean): void {
    this.addText({ id: this.options.selfId, name: "you", kind: "human" }, text, isPrivate, true);
  }

  addText(actor: ActorRef, text: string, isPrivate: boolean, own = false): void {
    const doc = this.container.ownerDocument;
    const line = doc.createElement("div");
    line.className = "message" + (isPrivate ? " private" : "") + (own ? " own" : "");
    const author = doc.createElement("span");
    author.className = "author";
    author.textContent = own ? "you" : actor.name;
    const body = doc.createElement("span");
    body.className = "body";
    if (this.options.markdown) {
      body.innerHTML = renderMarkdown(text);
    } else {
      body.textContent = text;
    }
    line.appendChild(author);
    if (isPrivate) {
      const marker = doc.createElement("span");
      marker.className = "private-marker";
      marker.textContent = "(private)";
      line.appendChild(marker);
    }
    line.appendChild(body);
    this.container.appendChild(line);
    this.container.scrollTop = this.container.scrollHeight;
  }

  addImage(actor: ActorRef, url: string): void {
    const doc = this.container.ownerDocument;
    const line = doc.createElement("div");
    line.className = "message image";
    const author = doc.createElement("span");
    author.className = "author";
    author.textContent = actor.name;
    line.appendChild(author);
    if (safeAttribute("src", url)) {
      const img = doc.createElement("img");
      img.setAttribute("src", url);
      img.setAttribute("alt", `image from ${escapeHtml(actor.name)}`);
      line.appendChild(img);
    }
    this.container.appendChild(line);
  }

  addStatus(text: string): void {
    const doc = this.container.ownerDocument;
    const line = doc.createElement("div");
    line.className = "status";
    line.textContent = text;
    this.container.appendChild(line);
  }
}

export class RosterView {
  private members = new Map<number, Member>();

  constructor(private container: HTMLElement) {}

  setMembers(members: Member[]): void {
    this.members.clear();
    for (const member of members) this.members.set(member.id, member);
    this.renderList();
  }

  applyJoin(frame: EventFrame): void {
    const user = frame.payload.user as Member;
    this.members.set(user.id, { ...user, connected: true });
    this.renderList();
  }

  applyLeave(frame: EventFrame): void {
    const user = frame.payload.user as Member;
    if (frame.payload.reason === "disconnect") {
      const existing = this.members.get(user.id);
      if (existing) existing.connected = false;
    } else {
      this.members.delete(user.id);
    }
    this.renderList();
  }

  names(): string[] {
    return [...this.members.values()].map((m) => m.name);
  }

  resolve(name: string): number | undefined {
    for (const member of this.members.values()) {
      if (member.name === name) return member.id;
    }
    return undefined;
  }

  private renderList(): void {
    const doc = this.container.ownerDocument;
    this.container.textContent = "";
    for (const member of this.members.values()) {
      const entry = doc.createElement("span");
      entry.className =
        "member" + (member.connected === false ? " away" : "") +
        (member.kind === "bot" ? " bot" : "");
      entry.textContent = member.name;
      this.container.appendChild(entry);
    }
  }
}

export function drawBoxOverlay(
  doc: Document,
  layer: HTMLElement,
  box: { x0: number; y0: number; x1: number; y1: number },
  cls = "box-annotation",
): HTMLElement {
  const rect = doc.createElement("div");
  rect.className = cls;
  rect.style.left = `${box.x0}px`;
  rect.style.top = `${box.y0}px`;
  rect.style.width = `${box.x1 - box.x0}px`;
  rect.style.height = `${box.y1 - box.y0}px`;
  layer.appendChild(rect);
  return rect;
}
