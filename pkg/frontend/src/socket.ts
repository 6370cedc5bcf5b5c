// Gateway connection: JSON frames over a websocket, FIFO receipt matching,
// per-room sequence deduplication, and resume-key reconnection.

import {
  ClientFrame,
  EventFrame,
  ReceiptPayload,
  ServerFrame,
  WelcomePayload,
} from "./protocol.js";

export type FrameHandler = (frame: ServerFrame) => void;

export interface WebSocketLike {
  send(data: string): void;
  close(code?: number, reason?: string): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: { code: number; reason: string }) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

export interface ChatSocketOptions {
  token?: string;
  name?: string;
  resume?: string;
  webSocketFactory?: WebSocketFactory;
  reconnectBaseMs?: number;
  onClose?: (code: number, reason: string) => void;
}

interface Pending {
  resolve: (receipt: ReceiptPayload) => void;
  reject: (error: Error) => void;
}

export class ChatSocket {
  userId: number | null = null;
  userName = "";
  kind = "";
  resumeKey: string | null = null;
  rooms = new Set<string>();
  lastSeq = new Map<string, number>();

  private ws: WebSocketLike | null = null;
  private handlers = new Map<string, FrameHandler[]>();
  private pending: Pending[] = [];
  private closedByUs = false;

  constructor(private baseUrl: string, private options: ChatSocketOptions) {}

  private wsUrl(): string {
    const base = this.baseUrl.replace(/^http/, "ws").replace(/\/$/, "");
    const params = new URLSearchParams();
    if (this.resumeKey ?? this.options.resume) {
      params.set("resume", (this.resumeKey ?? this.options.resume)!);
      if (this.options.name) params.set("name", this.options.name);
    } else {
      if (this.options.token) params.set("token", this.options.token);
      if (this.options.name) params.set("name", this.options.name);
    }
    return `${base}/chat?${params.toString()}`;
  }

  connect(): Promise<WelcomePayload> {
    const factory =
      this.options.webSocketFactory ??
      ((url: string) => new WebSocket(url) as unknown as WebSocketLike);
    return new Promise((resolve, reject) => {
      const ws = factory(this.wsUrl());
      this.ws = ws;
      let welcomed = false;
      ws.onmessage = (ev) => {
        const frame = JSON.parse(String(ev.data)) as ServerFrame;
        if (!welcomed && frame.type === "welcome") {
          welcomed = true;
          const payload = frame.payload as WelcomePayload;
          this.userId = payload.user_id;
          this.userName = payload.name;
          this.kind = payload.kind;
          this.resumeKey = payload.resume_key;
          payload.rooms.forEach((room) => this.rooms.add(room));
          resolve(payload);
          return;
        }
        this.handleFrame(frame);
      };
      ws.onclose = (ev) => {
        this.failPending(new Error(`connection closed (${ev.code})`));
        if (!welcomed) {
          reject(new Error(`login rejected: ${ev.code} ${ev.reason}`));
        }
        if (!this.closedByUs) {
          this.options.onClose?.(ev.code, ev.reason);
        }
      };
      ws.onerror = () => {
        if (!welcomed) reject(new Error("connection failed"));
      };
    });
  }

  close(): void {
    this.closedByUs = true;
    this.ws?.close();
  }

  on(type: string, handler: FrameHandler): this {
    const list = this.handlers.get(type) ?? [];
    list.push(handler);
    this.handlers.set(type, list);
    return this;
  }

  private fire(frame: ServerFrame): void {
    for (const handler of this.handlers.get(frame.type) ?? []) handler(frame);
    for (const handler of this.handlers.get("*") ?? []) handler(frame);
  }

  private handleFrame(frame: ServerFrame): void {
    if (frame.type === "receipt") {
      const pending = this.pending.shift();
      pending?.resolve(frame.payload as ReceiptPayload);
      return;
    }
    if (frame.type === "room_state") {
      if (frame.room) this.rooms.add(frame.room);
      this.fire(frame);
      const history = (frame.payload?.history ?? []) as EventFrame[];
      for (const entry of history) this.replayEntry(entry);
      return;
    }
    if (frame.seq !== undefined && frame.room !== undefined) {
      if (frame.seq <= (this.lastSeq.get(frame.room) ?? 0)) return;
      this.lastSeq.set(frame.room, frame.seq);
    }
    this.fire(frame);
  }

  private replayEntry(entry: EventFrame): void {
    if (entry.seq <= (this.lastSeq.get(entry.room) ?? 0)) return;
    this.lastSeq.set(entry.room, entry.seq);
    this.fire(entry);
  }

  private failPending(error: Error): void {
    const pending = this.pending;
    this.pending = [];
    for (const p of pending) p.reject(error);
  }

  emit(
    type: string,
    room: string,
    payload: Record<string, unknown> = {},
    to?: number,
  ): Promise<ReceiptPayload> {
    if (!this.ws) return Promise.reject(new Error("not connected"));
    const frame: ClientFrame = { type, room, payload };
    if (to !== undefined) frame.to = to;
    return new Promise((resolve, reject) => {
      this.pending.push({ resolve, reject });
      this.ws!.send(JSON.stringify(frame));
    });
  }

  sendText(room: string, text: string, to?: number): Promise<ReceiptPayload> {
    return this.emit("text_message", room, { text }, to);
  }

  sendCommand(room: string, command: string, args: string[]): Promise<ReceiptPayload> {
    return this.emit("command", room, { command, args });
  }

  sendKeystroke(room: string, textSoFar: string): Promise<ReceiptPayload> {
    return this.emit("keystroke", room, { text_so_far: textSoFar });
  }

  sendTyping(room: string, started: boolean): Promise<ReceiptPayload> {
    return this.emit(started ? "typing_started" : "typing_stopped", room, {});
  }

  sendBoundingBox(
    room: string,
    elementId: string,
    box: { x0: number; y0: number; x1: number; y1: number },
  ): Promise<ReceiptPayload> {
    return this.emit("bounding_box", room, { element_id: elementId, ...box });
  }

  sendMouse(room: string, elementId: string, x: number, y: number): Promise<ReceiptPayload> {
    return this.emit("mouse", room, { element_id: elementId, x, y });
  }

  sync(room: string, sinceSeq = 0): Promise<ReceiptPayload> {
    return this.emit("sync", room, { since_seq: sinceSeq });
  }
}
