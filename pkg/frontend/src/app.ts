// Application controller: wires the socket to the chat area (history, typing
// indicator, input) and the display area (layout tree, annotations, roster).
//
// The page is split into the chat area on the left and the display area on
// the right; the roster in the top right corner shows who is present.

import { BoxDrag } from "./boxes.js";
import { dispatchInput } from "./input.js";
import { LiveTypingThrottle } from "./livetyping.js";
import { EventFrame, RoomStatePayload, ServerFrame, closeReason } from "./protocol.js";
import { PluginConfig, activePlugins } from "./plugins.js";
import {
  HistoryView,
  RosterView,
  applyDisplayUpdate,
  drawBoxOverlay,
  renderLayout,
} from "./renderer.js";
import { ChatSocket } from "./socket.js";
import { TypingTracker } from "./typing.js";

const TYPING_IDLE_MS = 3000;

export class ChatApp {
  room: string | null = null;
  plugins: PluginConfig = activePlugins({});
  history!: HistoryView;
  roster!: RosterView;
  typing = new TypingTracker();
  displayRoot: HTMLElement | null = null;
  liveTyping: LiveTypingThrottle | null = null;
  private typingActive = false;
  private typingIdleHandle: unknown = null;
  private drag = new BoxDrag();

  constructor(
    private doc: Document,
    private socket: ChatSocket,
    private els: {
      history: HTMLElement;
      typing: HTMLElement;
      input: HTMLInputElement;
      send: HTMLElement;
      roster: HTMLElement;
      display: HTMLElement;
      banner: HTMLElement;
      title: HTMLElement;
    },
  ) {
    this.roster = new RosterView(els.roster);
    socket.on("room_state", (frame) => this.onRoomState(frame));
    socket.on("text_message", (frame) => this.onEvent(frame as EventFrame));
    socket.on("image_message", (frame) => this.onEvent(frame as EventFrame));
    socket.on("code_issued", (frame) => this.onEvent(frame as EventFrame));
    socket.on("typing_started", (frame) => this.onTyping(frame as EventFrame));
    socket.on("typing_stopped", (frame) => this.onTyping(frame as EventFrame));
    socket.on("keystroke", (frame) => this.onKeystroke(frame as EventFrame));
    socket.on("joined", (frame) => this.onJoined(frame as EventFrame));
    socket.on("left", (frame) => this.onLeft(frame as EventFrame));
    socket.on("display_update", (frame) => this.onDisplayUpdate(frame as EventFrame));
    socket.on("bounding_box", (frame) => this.onBoundingBox(frame as EventFrame));
    socket.on("room_closed", () => this.history.addStatus("This room has been closed."));
    this.bindInput();
  }

  showBanner(text: string): void {
    this.els.banner.textContent = text;
    this.els.banner.style.display = text ? "" : "none";
  }

  onConnectionClosed(code: number, reason: string): void {
    this.showBanner(closeReason(code) + (reason ? ` (${reason})` : ""));
  }

  private onRoomState(frame: ServerFrame): void {
    const payload = frame.payload as RoomStatePayload;
    // humans live in one room; the latest snapshot wins
    this.room = payload.room;
    this.plugins = activePlugins(payload.layout.scripts);
    this.els.title.textContent = payload.layout.title;
    this.history = new HistoryView(this.els.history, {
      selfId: this.socket.userId ?? -1,
      markdown: this.plugins.renderMarkdown,
      showImages: this.plugins.showImages,
    });
    this.history.clear();
    this.roster.setMembers(payload.members);
    this.renderDisplay(payload);
    for (const entry of payload.history ?? []) {
      this.history.addHistoryFrame(entry);
    }
    if (payload.read_only) {
      this.history.addStatus("This room is read-only.");
    }
    this.liveTyping = this.plugins.liveTyping
      ? new LiveTypingThrottle((draft) => {
          if (this.room) void this.socket.sendKeystroke(this.room, draft);
        })
      : null;
  }

  private renderDisplay(payload: RoomStatePayload): void {
    this.els.display.textContent = "";
    this.displayRoot = renderLayout(this.doc, payload.layout);
    this.els.display.appendChild(this.displayRoot);
    if (this.plugins.boundingBoxes || this.plugins.mouseTracking) {
      this.attachAnnotationHandlers();
    }
  }

  private onEvent(frame: EventFrame): void {
    if (frame.room !== this.room) return;
    this.typing.apply({ type: "typing_stopped", actor: frame.actor });
    this.updateTypingLabel();
    this.history.addFrame(frame);
  }

  private onTyping(frame: EventFrame): void {
    if (frame.room !== this.room || !this.plugins.typingUsers) return;
    this.typing.apply(frame);
    this.updateTypingLabel();
  }

  private onKeystroke(frame: EventFrame): void {
    if (frame.room !== this.room || !this.plugins.liveTyping) return;
    // live drafts appear in the typing strip and never enter history
    const draft = frame.payload.text_so_far as string;
    this.els.typing.textContent = draft
      ? `${frame.actor.name}: ${draft}`
      : this.typing.label();
  }

  private updateTypingLabel(): void {
    this.els.typing.textContent = this.typing.label();
  }

  private onJoined(frame: EventFrame): void {
    if (frame.room !== this.room) return;
    this.roster.applyJoin(frame);
    if (frame.payload.user.id !== this.socket.userId) {
      this.history.addStatus(`${frame.payload.user.name} joined`);
    }
  }

  private onLeft(frame: EventFrame): void {
    if (frame.room !== this.room) return;
    this.roster.applyLeave(frame);
    this.typing.apply({ type: "typing_stopped", actor: frame.actor });
    this.updateTypingLabel();
    this.history.addStatus(`${frame.payload.user.name} left`);
  }

  private onDisplayUpdate(frame: EventFrame): void {
    if (frame.room !== this.room || !this.displayRoot) return;
    applyDisplayUpdate(this.displayRoot, frame.payload);
  }

  private onBoundingBox(frame: EventFrame): void {
    // boxes render for everyone from the round-tripped event, the drawer included
    if (frame.room !== this.room || !this.displayRoot) return;
    const layer = this.annotationLayer(frame.payload.element_id);
    if (layer) {
      drawBoxOverlay(this.doc, layer, frame.payload as never);
    }
  }

  private annotationLayer(elementId: string): HTMLElement | null {
    if (!this.displayRoot) return null;
    const target = this.displayRoot.querySelector<HTMLElement>(`[id="${elementId}"]`);
    if (!target || !target.parentElement) return null;
    let layer = target.parentElement.querySelector<HTMLElement>(".annotation-layer");
    if (!layer) {
      layer = this.doc.createElement("div");
      layer.className = "annotation-layer";
      target.parentElement.appendChild(layer);
    }
    return layer;
  }

  private attachAnnotationHandlers(): void {
    if (!this.displayRoot) return;
    const targets = this.displayRoot.querySelectorAll<HTMLElement>("[id]");
    targets.forEach((el) => {
      el.addEventListener("mousedown", (ev) => {
        if (!this.plugins.boundingBoxes) return;
        const { x, y } = this.relativePoint(el, ev as MouseEvent);
        this.drag.start(x, y);
      });
      el.addEventListener("mouseup", (ev) => {
        if (!this.plugins.boundingBoxes || !this.drag.active || !this.room) return;
        const rect = el.getBoundingClientRect();
        const { x, y } = this.relativePoint(el, ev as MouseEvent);
        const box = this.drag.end(x, y, rect.width, rect.height);
        if (box && el.id) {
          void this.socket.sendBoundingBox(this.room, el.id, box);
        }
      });
      el.addEventListener("mousemove", (ev) => {
        if (!this.plugins.mouseTracking || !this.room || !el.id) return;
        const { x, y } = this.relativePoint(el, ev as MouseEvent);
        void this.socket.sendMouse(this.room, el.id, x, y);
      });
    });
  }

  private relativePoint(el: HTMLElement, ev: MouseEvent): { x: number; y: number } {
    const rect = el.getBoundingClientRect();
    return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  }

  private bindInput(): void {
    const submit = () => void this.submitInput();
    this.els.send.addEventListener("click", submit);
    this.els.input.addEventListener("keydown", (ev) => {
      const key = (ev as KeyboardEvent).key;
      if (key === "Enter") {
        submit();
        return;
      }
    });
    this.els.input.addEventListener("input", () => {
      this.onComposing(this.els.input.value);
    });
  }

  onComposing(draft: string): void {
    if (!this.room) return;
    if (this.plugins.typingUsers) {
      if (draft && !this.typingActive) {
        this.typingActive = true;
        void this.socket.sendTyping(this.room, true);
      } else if (!draft && this.typingActive) {
        this.typingActive = false;
        void this.socket.sendTyping(this.room, false);
      }
      this.armTypingIdle();
    }
    if (this.liveTyping) {
      this.liveTyping.update(draft);
    }
  }

  private armTypingIdle(): void {
    if (this.typingIdleHandle !== null) clearTimeout(this.typingIdleHandle as never);
    this.typingIdleHandle = setTimeout(() => {
      if (this.typingActive && this.room) {
        this.typingActive = false;
        void this.socket.sendTyping(this.room, false);
      }
    }, TYPING_IDLE_MS);
  }

  async submitInput(): Promise<void> {
    if (!this.room) return;
    const raw = this.els.input.value;
    const action = dispatchInput(raw, (name) => this.roster.resolve(name));
    if (action.kind === "error") {
      this.showBanner(action.message);
      return;
    }
    this.showBanner("");
    let receipt;
    if (action.kind === "command") {
      receipt = await this.socket.sendCommand(this.room, action.command, action.args);
    } else {
      receipt = await this.socket.sendText(this.room, action.text, action.to);
    }
    if (receipt.status !== "ok") {
      // rejected input stays in the box so nothing typed is lost
      this.showBanner(receipt.error?.message ?? "could not send");
      return;
    }
    if (action.kind === "text") {
      this.history.addOwn(action.text, action.to !== undefined);
    }
    if (this.typingActive) {
      this.typingActive = false;
      void this.socket.sendTyping(this.room, false);
    }
    this.liveTyping?.reset();
    this.els.input.value = "";
  }
}
