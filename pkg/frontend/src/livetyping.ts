// Live-typing: stream the in-progress draft to peers while composing.
//
// Drafts are throttled client-side (the server enforces its own cap): the
// first change goes out immediately, later changes at most once per interval,
// with a trailing send so the final state always arrives. Every send carries
// the draft as it is at that moment, so sent values are snapshots (prefixes,
// when the user only appends).

export type Scheduler = (fn: () => void, ms: number) => unknown;
export type Canceler = (handle: unknown) => void;

export class LiveTypingThrottle {
  private lastSent = -Infinity;
  private pendingHandle: unknown = null;
  private draft = "";
  readonly sent: string[] = [];

  constructor(
    private send: (draft: string) => void,
    private intervalMs = 100,
    private now: () => number = () => Date.now(),
    private schedule: Scheduler = (fn, ms) => setTimeout(fn, ms),
    private cancel: Canceler = (h) => clearTimeout(h as never),
  ) {}

  update(draft: string): void {
    this.draft = draft;
    const elapsed = this.now() - this.lastSent;
    if (elapsed >= this.intervalMs) {
      this.flushNow();
    } else if (this.pendingHandle === null) {
      this.pendingHandle = this.schedule(() => {
        this.pendingHandle = null;
        this.flushNow();
      }, this.intervalMs - elapsed);
    }
  }

  private flushNow(): void {
    this.lastSent = this.now();
    this.sent.push(this.draft);
    this.send(this.draft);
  }

  reset(): void {
    if (this.pendingHandle !== null) {
      this.cancel(this.pendingHandle);
      this.pendingHandle = null;
    }
    this.draft = "";
    this.lastSent = -Infinity;
  }
}
