/** Session controller: display state, keyboard mapping and the strictly
 * ordered delta queue.
 *
 * The controller never computes poses itself; the displayed pose is
 * always the one acknowledged by the service.
 */

import {
  AlignClient,
  ApiError,
  CommitEntry,
  CreateSessionRequest,
  DeltaRequest,
  Eye,
  Pose,
  PreviewStats,
  RenderMode,
} from "./api.js";

export interface StepSizes {
  /** radians per coarse / fine rotation keypress */
  angleCoarse: number;
  angleFine: number;
  /** mm per coarse / fine axial-slide keypress */
  dzCoarse: number;
  dzFine: number;
}

/** A few coarse presses span the ~2 px alignment precision at f ~ 1000 px. */
export const DEFAULT_STEPS: StepSizes = {
  angleCoarse: 0.005,
  angleFine: 0.0005,
  dzCoarse: 0.5,
  dzFine: 0.05,
};

export type DeltaAxis = "rx" | "ry" | "rz" | "dz";

/** Keyboard layout: arrows tilt (X/Y), q/e roll about the view axis,
 * w/s slide the camera along it. */
export const KEY_BINDINGS: Record<string, [DeltaAxis, number]> = {
  ArrowUp: ["rx", -1],
  ArrowDown: ["rx", +1],
  ArrowLeft: ["ry", -1],
  ArrowRight: ["ry", +1],
  q: ["rz", -1],
  e: ["rz", +1],
  w: ["dz", +1],
  s: ["dz", -1],
};

export interface UiState {
  sessionId: string | null;
  pose: Pose | null;
  dzAccumulated: number;
  alpha: number;
  mode: RenderMode;
  eye: Eye;
  swap: boolean;
  fine: boolean;
  steps: StepSizes;
  renderRevision: number;
  commits: CommitEntry[];
  preview: PreviewStats | null;
  lastError: string | null;
}

function validateSteps(steps: StepSizes): void {
  for (const value of [steps.angleCoarse, steps.angleFine, steps.dzCoarse, steps.dzFine]) {
    if (!(value > 0)) throw new Error(`step sizes must be positive, got ${value}`);
  }
}

export class AlignmentController {
  readonly state: UiState;
  private queue: Promise<unknown> = Promise.resolve();
  private listeners: Array<() => void> = [];

  constructor(
    private readonly client: AlignClient,
    steps: StepSizes = DEFAULT_STEPS,
  ) {
    validateSteps(steps);
    this.state = {
      sessionId: null,
      pose: null,
      dzAccumulated: 0,
      alpha: 0.5,
      mode: "solid",
      eye: "pair",
      swap: false,
      fine: false,
      steps,
      renderRevision: 0,
      commits: [],
      preview: null,
      lastError: null,
    };
  }

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  /** Serialise an async action after every previously queued one. */
  private enqueue<T>(action: () => Promise<T>): Promise<T> {
    const next = this.queue.then(action);
    // keep the chain alive after failures; errors surface to the caller
    this.queue = next.catch(() => undefined);
    return next;
  }

  async connect(req: CreateSessionRequest): Promise<void> {
    const info = await this.client.createSession(req);
    this.state.sessionId = info.session_id;
    this.state.pose = info.pose;
    this.state.dzAccumulated = info.dz_accumulated;
    this.state.commits = [];
    this.state.preview = null;
    this.state.lastError = null;
    this.state.renderRevision += 1;
    this.notify();
  }

  private requireSession(): string {
    if (this.state.sessionId === null) throw new Error("no active session");
    return this.state.sessionId;
  }

  /** Map a key press to a delta request; returns null for unbound keys. */
  handleKey(key: string, fine: boolean = this.state.fine): Promise<void> | null {
    const binding = KEY_BINDINGS[key];
    if (!binding) return null;
    const [axis, sign] = binding;
    const steps = this.state.steps;
    const magnitude =
      axis === "dz"
        ? fine
          ? steps.dzFine
          : steps.dzCoarse
        : fine
          ? steps.angleFine
          : steps.angleCoarse;
    return this.sendDelta({ [axis]: sign * magnitude });
  }

  /** POST one delta; queued so concurrent inputs apply strictly in order. */
  sendDelta(delta: DeltaRequest): Promise<void> {
    const sessionId = this.requireSession();
    return this.enqueue(async () => {
      try {
        const resp = await this.client.applyDelta(sessionId, delta);
        this.state.pose = resp.pose;
        this.state.dzAccumulated = resp.dz_accumulated;
        this.state.lastError = null;
        this.state.renderRevision += 1;
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          // axial bound reached: state on the server is unchanged
          this.state.lastError = `axial limit: ${err.message}`;
        } else {
          this.state.lastError = String(err instanceof Error ? err.message : err);
          throw err;
        }
      } finally {
        this.notify();
      }
    });
  }

  async commit(operator: string): Promise<CommitEntry> {
    const sessionId = this.requireSession();
    return this.enqueue(async () => {
      const entry = await this.client.commit(sessionId, operator);
      this.state.commits = await this.client.listCommits(sessionId);
      try {
        this.state.preview = await this.client.preview(sessionId);
      } catch (err) {
        this.state.lastError = String(err instanceof Error ? err.message : err);
      }
      this.notify();
      return entry;
    });
  }

  async refreshPreview(): Promise<void> {
    const sessionId = this.requireSession();
    this.state.preview = await this.client.preview(sessionId);
    this.notify();
  }

  setAlpha(alpha: number): void {
    if (!(alpha >= 0 && alpha <= 1)) throw new Error(`alpha must lie in [0, 1], got ${alpha}`);
    this.state.alpha = alpha;
    this.state.renderRevision += 1;
    this.notify();
  }

  setMode(mode: RenderMode): void {
    this.state.mode = mode;
    this.state.renderRevision += 1;
    this.notify();
  }

  setFine(fine: boolean): void {
    this.state.fine = fine;
    this.notify();
  }

  toggleSwap(): void {
    this.state.swap = !this.state.swap;
    this.state.renderRevision += 1;
    this.notify();
  }

  renderUrl(): string {
    const sessionId = this.requireSession();
    return this.client.renderUrl(
      sessionId,
      {
        eye: this.state.eye,
        mode: this.state.mode,
        alpha: this.state.alpha,
        swap: this.state.swap,
      },
      this.state.renderRevision,
    );
  }
}
