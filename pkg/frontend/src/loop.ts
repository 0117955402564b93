/** Render-request scheduling: coalescing, stale discard, adaptive size.
 *
 * Interaction can outpace the service by orders of magnitude, so camera
 * changes never queue up: at most one request is normally in flight and
 * the newest desired view replaces any waiting one. If the in-flight
 * request stalls past `reissueAfterMs`, one more may be issued in
 * parallel; responses carry monotonically increasing ids and a frame is
 * shown only if it is newer than the newest frame already shown, so a
 * late response can never overwrite a newer view.
 *
 * The requested resolution follows measured round-trip time toward
 * `budgetMs` (halving/growing by sqrt(2) between bounds).
 */

import type { RenderRequestBody, RenderResponse, ViewState } from "./types.js";

export interface DisplayedFrame {
  bytes: Uint8Array;
  state: ViewState;
  requestId: number;
  roundTripMs: number;
  width: number;
  height: number;
}

export interface FrameLoopOptions {
  budgetMs?: number;
  minWidth?: number;
  maxWidth?: number;
  aspect?: number; // height / width
  nSamples?: number;
  seed?: number;
  reissueAfterMs?: number;
  now?: () => number;
}

export type RenderFn = (body: RenderRequestBody) => Promise<RenderResponse>;

export function toRequestBody(s: ViewState, width: number, height: number,
                              nSamples: number, seed: number): RenderRequestBody {
  const body: RenderRequestBody = {
    pose: { position: [s.x, s.y, s.z], yaw: s.yawDeg, pitch: s.pitchDeg, roll: 0 },
    width,
    height,
    appearance_key: s.appearanceKey,
    markers_on: s.markersOn,
    n_samples: nSamples,
    seed,
  };
  if (s.markersOn && s.trajectoryId !== undefined) {
    body.trajectory_id = s.trajectoryId;
  }
  return body;
}

export class FrameLoop {
  private seq = 0;
  private displayedId = 0;
  private inflight = 0;
  private lastIssuedAt = -Infinity;
  private pending: ViewState | null = null;
  private rttEma: number | null = null;
  private width: number;

  private readonly budgetMs: number;
  private readonly minWidth: number;
  private readonly maxWidth: number;
  private readonly aspect: number;
  private readonly nSamples: number;
  private readonly seed: number;
  private readonly reissueAfterMs: number;
  private readonly now: () => number;

  displayed: DisplayedFrame | null = null;
  requestsIssued = 0;
  staleDiscarded = 0;
  errors = 0;

  constructor(private readonly render: RenderFn,
              private readonly onFrame: (f: DisplayedFrame) => void,
              opts: FrameLoopOptions = {}) {
    this.budgetMs = opts.budgetMs ?? 1000;
    this.minWidth = opts.minWidth ?? 40;
    this.maxWidth = opts.maxWidth ?? 320;
    this.aspect = opts.aspect ?? 0.75;
    this.nSamples = opts.nSamples ?? 64;
    this.seed = opts.seed ?? 0;
    this.reissueAfterMs = opts.reissueAfterMs ?? 4 * this.budgetMs;
    this.now = opts.now ?? (() => Date.now());
    this.width = opts.maxWidth !== undefined
      ? Math.min(160, this.maxWidth) : 160;
  }

  get currentWidth(): number {
    return this.width;
  }

  get currentHeight(): number {
    return Math.max(8, Math.round(this.width * this.aspect));
  }

  get hasPending(): boolean {
    return this.pending !== null;
  }

  /** Ask for this view; rapid calls coalesce into the newest one. */
  request(state: ViewState): void {
    this.pending = state;
    this.pump();
  }

  private canIssue(): boolean {
    if (this.inflight === 0) return true;
    return this.inflight === 1 &&
      this.now() - this.lastIssuedAt > this.reissueAfterMs;
  }

  private pump(): void {
    if (this.pending === null || !this.canIssue()) return;
    const state = this.pending;
    this.pending = null;
    const id = ++this.seq;
    const started = this.now();
    this.lastIssuedAt = started;
    this.inflight += 1;
    this.requestsIssued += 1;
    const w = this.width;
    const h = this.currentHeight;
    this.render(toRequestBody(state, w, h, this.nSamples, this.seed)).then(
      (resp) => this.settle(id, state, resp, this.now() - started, w, h),
      () => {
        this.inflight -= 1;
        this.errors += 1;
        this.pump();
      },
    );
  }

  private settle(id: number, state: ViewState, resp: RenderResponse,
                 roundTripMs: number, width: number, height: number): void {
    this.inflight -= 1;
    if (id <= this.displayedId) {
      this.staleDiscarded += 1;  // a newer frame is already on screen
      this.pump();
      return;
    }
    this.displayedId = id;
    this.adapt(roundTripMs);
    this.displayed = { bytes: resp.bytes, state, requestId: id, roundTripMs,
                       width, height };
    this.onFrame(this.displayed);
    this.pump();
  }

  private adapt(roundTripMs: number): void {
    this.rttEma = this.rttEma === null
      ? roundTripMs : 0.5 * this.rttEma + 0.5 * roundTripMs;
    const step = Math.SQRT2;
    if (this.rttEma > this.budgetMs && this.width > this.minWidth) {
      this.width = Math.max(this.minWidth, Math.round(this.width / step / 4) * 4);
    } else if (this.rttEma < 0.35 * this.budgetMs && this.width < this.maxWidth) {
      this.width = Math.min(this.maxWidth, Math.round(this.width * step / 4) * 4);
    }
  }
}
