import { describe, expect, it } from "vitest";

import { LiveTypingThrottle } from "../src/livetyping.js";

/** Deterministic clock + scheduler for driving the throttle. */
class FakeTime {
  now = 0;
  private timers: Array<{ at: number; fn: () => void; dead: boolean }> = [];

  schedule = (fn: () => void, ms: number) => {
    const timer = { at: this.now + ms, fn, dead: false };
    this.timers.push(timer);
    return timer;
  };

  cancel = (handle: unknown) => {
    (handle as { dead: boolean }).dead = true;
  };

  advance(ms: number): void {
    const target = this.now + ms;
    for (;;) {
      const due = this.timers
        .filter((t) => !t.dead && t.at <= target)
        .sort((a, b) => a.at - b.at)[0];
      if (!due) break;
      this.timers.splice(this.timers.indexOf(due), 1);
      this.now = due.at;
      due.fn();
    }
    this.now = target;
  }
}

function throttled(intervalMs = 100) {
  const time = new FakeTime();
  const sent: string[] = [];
  const throttle = new LiveTypingThrottle(
    (draft) => sent.push(draft), intervalMs, () => time.now, time.schedule, time.cancel);
  return { time, sent, throttle };
}

describe("live-typing throttle", () => {
  it("sends the first keystroke immediately", () => {
    const { sent, throttle } = throttled();
    throttle.update("h");
    expect(sent).toEqual(["h"]);
  });

  it("coalesces rapid keystrokes into a trailing send", () => {
    const { time, sent, throttle } = throttled(100);
    throttle.update("a");
    time.advance(10);
    throttle.update("ab");
    time.advance(10);
    throttle.update("abc");
    expect(sent).toEqual(["a"]);
    time.advance(100);
    expect(sent).toEqual(["a", "abc"]); // the final draft always arrives
  });

  it("every sent draft is a prefix of the final text when typing forward", () => {
    const { time, sent, throttle } = throttled(100);
    const final = "hello world";
    for (let i = 1; i <= final.length; i++) {
      throttle.update(final.slice(0, i));
      time.advance(21);
    }
    time.advance(200);
    expect(sent.length).toBeGreaterThanOrEqual(1);
    for (const draft of sent) {
      expect(final.startsWith(draft)).toBe(true);
    }
    expect(sent[sent.length - 1]).toBe(final);
  });

  it("bounds the send rate to one per interval", () => {
    const { time, sent, throttle } = throttled(100);
    for (let i = 0; i < 200; i++) {
      throttle.update("x".repeat(i + 1));
      time.advance(5);
    }
    time.advance(200);
    const elapsedSeconds = time.now / 1000;
    expect(sent.length).toBeLessThanOrEqual(Math.ceil(elapsedSeconds * 10) + 2);
  });

  it("reset drops the pending trailing send", () => {
    const { time, sent, throttle } = throttled(100);
    throttle.update("a");
    throttle.update("ab");
    throttle.reset();
    time.advance(500);
    expect(sent).toEqual(["a"]);
  });
});
