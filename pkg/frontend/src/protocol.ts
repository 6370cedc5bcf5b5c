// Wire protocol types. Client frames are {type, room, payload, to?}; every
// client frame is answered by exactly one receipt frame, in order. Server
// event frames additionally carry {seq, timestamp, actor}.

export interface ActorRef {
  id: number | null;
  name: string;
  kind: "human" | "bot" | "system";
}

export interface Member {
  id: number;
  name: string;
  kind: "human" | "bot";
  connected?: boolean;
  permissions?: string[];
  task_id?: number | null;
}

export interface EventFrame {
  type: string;
  room: string;
  seq: number;
  timestamp: string;
  actor: ActorRef;
  displayed_actor?: ActorRef;
  receiver?: number;
  payload: Record<string, any>;
}

export interface ReceiptPayload {
  status: "ok" | "error";
  room?: string;
  seq?: number;
  error?: { code: string; message: string; path?: string };
}

export interface RenderedNode {
  kind: string;
  id: string | null;
  style: string | null;
  src: string | null;
  autoplay: boolean | null;
  text: string | null;
  class: string | null;
  attributes: Record<string, string>;
  visible: boolean;
  children: RenderedNode[];
}

export interface RenderedLayout {
  title: string;
  elements: RenderedNode[];
  scripts: Record<string, string>;
}

export interface RoomStatePayload {
  room: string;
  layout: RenderedLayout;
  members: Member[];
  read_only: boolean;
  relay: boolean;
  video_session: string | null;
  history: EventFrame[] | null;
}

export interface WelcomePayload {
  user_id: number;
  name: string;
  kind: string;
  resume_key: string;
  rooms: string[];
}

export interface ServerFrame {
  type: string;
  room?: string;
  seq?: number;
  timestamp?: string;
  actor?: ActorRef;
  receiver?: number;
  payload?: any;
}

export interface ClientFrame {
  type: string;
  room: string;
  payload: Record<string, unknown>;
  to?: number;
}

export const CLOSE_REASONS: Record<number, string> = {
  4001: "Login failed: this link is not valid (unknown or revoked token).",
  4002: "Login failed: this access link has already been used.",
  4003: "You were disconnected by an administrator.",
  4004: "Connection dropped: your client could not keep up with the stream.",
};

export function closeReason(code: number): string {
  return CLOSE_REASONS[code] ?? `Connection closed (code ${code}).`;
}
