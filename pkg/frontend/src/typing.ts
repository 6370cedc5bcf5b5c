// Typing indicator state: a pure fold over typing_started/typing_stopped
// events. Duplicate starts are idempotent (the indicator cannot double up).

import { EventFrame } from "./protocol.js";

export class TypingTracker {
  private active = new Map<number, string>();

  apply(frame: Pick<EventFrame, "type" | "actor">): void {
    const id = frame.actor.id;
    if (id === null) return;
    if (frame.type === "typing_started") {
      if (!this.active.has(id)) this.active.set(id, frame.actor.name);
    } else if (frame.type === "typing_stopped") {
      this.active.delete(id);
    }
  }

  names(): string[] {
    return [...this.active.values()];
  }

  isTyping(id: number): boolean {
    return this.active.has(id);
  }

  get count(): number {
    return this.active.size;
  }

  label(): string {
    const names = this.names();
    if (names.length === 0) return "";
    if (names.length === 1) return `${names[0]} is typing…`;
    return `${names.join(", ")} are typing…`;
  }
}
