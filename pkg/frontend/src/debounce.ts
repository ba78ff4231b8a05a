/** Debounced, single-flight, latest-wins request scheduling.
 *
 * The UI thread calls request() on every interaction. After a quiet period
 * one render is launched; at most one is ever in flight. A response is
 * committed only if no newer state has been requested since its launch, so
 * the displayed frame always matches the most recent committed state.
 */

export interface TimerHandle {
  id: ReturnType<typeof setTimeout>;
}

export interface SchedulerHooks<S, R> {
  run: (state: S) => Promise<R>;
  onResult: (state: S, result: R) => void;
  onError?: (state: S, error: unknown) => void;
}

export class RenderScheduler<S, R> {
  private generation = 0;
  private launchedGeneration = -1;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pendingState: S | null = null;
  private inFlight = false;
  /** Requests actually issued; observable for tests and latency stats. */
  issued = 0;

  constructor(
    private readonly hooks: SchedulerHooks<S, R>,
    private readonly debounceMs = 50,
  ) {}

  /** Schedule a render of the given state; newer calls supersede older. */
  request(state: S): void {
    this.generation += 1;
    this.pendingState = state;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.maybeLaunch();
    }, this.debounceMs);
  }

  /** True when a render is in flight or scheduled. */
  get busy(): boolean {
    return this.inFlight || this.timer !== null;
  }

  private maybeLaunch(): void {
    if (this.inFlight || this.pendingState === null) return;
    const state = this.pendingState;
    const gen = this.generation;
    this.pendingState = null;
    this.launchedGeneration = gen;
    this.inFlight = true;
    this.issued += 1;
    this.hooks
      .run(state)
      .then((result) => {
        this.inFlight = false;
        if (this.generation === gen) {
          // still the newest request: commit
          this.hooks.onResult(state, result);
        }
        this.maybeLaunch(); // drain anything queued meanwhile
      })
      .catch((error) => {
        this.inFlight = false;
        if (this.generation === gen) {
          this.hooks.onError?.(state, error);
        }
        this.maybeLaunch();
      });
  }
}
