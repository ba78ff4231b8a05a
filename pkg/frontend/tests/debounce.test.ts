import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import { RenderScheduler } from "../src/debounce.js";

interface Deferred<T> {
  promise: Promise<T>;
  resolve: (v: T) => void;
  reject: (e: unknown) => void;
}

function deferred<T>(): Deferred<T> {
  let resolve!: (v: T) => void;
  let reject!: (e: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

describe("RenderScheduler", () => {
  beforeEach(() => {
    vi.useFakeTimers();
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  function harness() {
    const launches: Array<{ state: number; d: Deferred<string> }> = [];
    const shown: Array<[number, string]> = [];
    const errors: unknown[] = [];
    const scheduler = new RenderScheduler<number, string>(
      {
        run: (state) => {
          const d = deferred<string>();
          launches.push({ state, d });
          return d.promise;
        },
        onResult: (state, result) => shown.push([state, result]),
        onError: (_s, e) => errors.push(e),
      },
      50,
    );
    return { scheduler, launches, shown, errors };
  }

  it("coalesces 20 rapid events into at most 3 requests", async () => {
    const { scheduler, launches } = harness();
    for (let i = 0; i < 20; i++) {
      scheduler.request(i);
      await vi.advanceTimersByTimeAsync(5); // 20 events within ~100 ms
    }
    await vi.advanceTimersByTimeAsync(100);
    launches.forEach((l) => l.d.resolve("frame"));
    await vi.advanceTimersByTimeAsync(100);
    expect(scheduler.issued).toBeLessThanOrEqual(3);
    expect(launches[launches.length - 1].state).toBe(19);
  });

  it("renders the latest state after the quiet period", async () => {
    const { scheduler, launches, shown } = harness();
    scheduler.request(1);
    scheduler.request(2);
    scheduler.request(3);
    await vi.advanceTimersByTimeAsync(60);
    expect(launches).toHaveLength(1);
    expect(launches[0].state).toBe(3);
    launches[0].d.resolve("f3");
    await vi.advanceTimersByTimeAsync(1);
    expect(shown).toEqual([[3, "f3"]]);
  });

  it("keeps at most one request in flight", async () => {
    const { scheduler, launches } = harness();
    scheduler.request(1);
    await vi.advanceTimersByTimeAsync(60);
    scheduler.request(2);
    await vi.advanceTimersByTimeAsync(60);
    scheduler.request(3);
    await vi.advanceTimersByTimeAsync(60);
    expect(launches).toHaveLength(1); // first still pending
    launches[0].d.resolve("f1");
    await vi.advanceTimersByTimeAsync(1);
    expect(launches).toHaveLength(2);
    expect(launches[1].state).toBe(3);
  });

  it("discards responses that a newer request superseded", async () => {
    const { scheduler, launches, shown } = harness();
    scheduler.request(1);
    await vi.advanceTimersByTimeAsync(60);
    scheduler.request(2); // newer state while 1 is in flight
    launches[0].d.resolve("stale frame");
    await vi.advanceTimersByTimeAsync(60);
    launches[1].d.resolve("fresh frame");
    await vi.advanceTimersByTimeAsync(1);
    // the stale response is never displayed
    expect(shown).toEqual([[2, "fresh frame"]]);
  });

  it("routes failures to onError, then recovers", async () => {
    const { scheduler, launches, shown, errors } = harness();
    scheduler.request(1);
    await vi.advanceTimersByTimeAsync(60);
    launches[0].d.reject(new Error("boom"));
    await vi.advanceTimersByTimeAsync(1);
    expect(errors).toHaveLength(1);
    scheduler.request(2);
    await vi.advanceTimersByTimeAsync(60);
    launches[1].d.resolve("ok");
    await vi.advanceTimersByTimeAsync(1);
    expect(shown).toEqual([[2, "ok"]]);
  });

  it("never blocks request() while a render is in flight", async () => {
    const { scheduler, launches } = harness();
    scheduler.request(1);
    await vi.advanceTimersByTimeAsync(60);
    const before = Date.now();
    for (let i = 0; i < 1000; i++) scheduler.request(i);
    expect(Date.now() - before).toBeLessThan(1000);
    expect(launches).toHaveLength(1);
  });
});
