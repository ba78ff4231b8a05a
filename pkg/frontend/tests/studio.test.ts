// @vitest-environment happy-dom
import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import { ApiClient } from "../src/api.js";
import { Studio } from "../src/ui.js";

const META = {
  k: 4,
  width: 64,
  height: 64,
  coeff_min: [0, 0, 0, 0],
  coeff_max: [1, 1, 1, 1],
};

/** In-memory render service: frame bytes are a stable function of the body. */
function fakeServer() {
  const renders: Array<{ coefficients: number[] }> = [];
  const frameBytes = (coeffs: number[]) =>
    new TextEncoder().encode(`PNG[${coeffs.join(",")}]`);
  const fetchFn = ((url: RequestInfo | URL, init?: RequestInit) => {
    const u = String(url);
    if (u.endsWith("/meta")) {
      return Promise.resolve(new Response(JSON.stringify(META)));
    }
    if (u.endsWith("/render")) {
      const body = JSON.parse(String(init?.body));
      renders.push(body);
      return Promise.resolve(
        new Response(frameBytes(body.coefficients), {
          headers: { "content-type": "image/png", "X-Render-Ms": "7.5" },
        }),
      );
    }
    if (u.endsWith("/render_batch")) {
      const body = JSON.parse(String(init?.body));
      const frames = body.coefficients.map((row: number[]) =>
        btoa(String.fromCharCode(...frameBytes(row))),
      );
      return Promise.resolve(
        new Response(
          JSON.stringify({ frames, render_ms: frames.map(() => 1) }),
        ),
      );
    }
    return Promise.resolve(new Response("nope", { status: 404 }));
  }) as typeof fetch;
  return { fetchFn, renders, frameBytes };
}

let urls: string[];

beforeEach(() => {
  urls = [];
  let counter = 0;
  vi.stubGlobal("URL", Object.assign(URL, {
    createObjectURL: (_blob: Blob) => {
      const u = `blob:mock-${counter++}`;
      urls.push(u);
      return u;
    },
    revokeObjectURL: () => {},
  }));
});

afterEach(() => {
  vi.unstubAllGlobals();
  vi.useRealTimers();
});

async function settle(ms = 200) {
  await vi.advanceTimersByTimeAsync(ms);
}

describe("Studio", () => {
  it("builds one slider per coefficient from /meta", async () => {
    vi.useFakeTimers();
    const server = fakeServer();
    const studio = new Studio(new ApiClient("http://s", server.fetchFn));
    await studio.connect();
    await settle();
    const sliders = studio.root.querySelectorAll(".slider-row input");
    expect(sliders).toHaveLength(4);
  });

  it("shows a banner and retry control when the server is down", async () => {
    const studio = new Studio(
      new ApiClient("http://s", (() =>
        Promise.reject(new Error("connection refused"))) as typeof fetch),
    );
    await studio.connect();
    const banner = studio.root.querySelector(".banner")!;
    expect(banner.classList.contains("hidden")).toBe(false);
    expect(banner.textContent).toMatch(/connection refused/);
    expect(studio.root.querySelector("button.retry")).toBeTruthy();
  });

  it("neutral sliders fetch exactly the server's w=0 frame", async () => {
    vi.useFakeTimers();
    const server = fakeServer();
    const studio = new Studio(new ApiClient("http://s", server.fetchFn));
    await studio.connect();
    await settle();
    // initial render is the neutral frame
    expect(server.renders[0].coefficients).toEqual([0, 0, 0, 0]);
    // drag a slider away and back to zero; the committed frame must be the
    // response whose body is byte-identical to the server's w=0 render
    const slider = studio.root.querySelectorAll(
      ".slider-row input",
    )[1] as HTMLInputElement;
    slider.value = "0.7";
    slider.dispatchEvent(new Event("input"));
    await settle();
    slider.value = "0";
    slider.dispatchEvent(new Event("input"));
    await settle();
    const last = server.renders[server.renders.length - 1];
    expect(last.coefficients).toEqual([0, 0, 0, 0]);
    const img = studio.root.querySelector("img.frame") as HTMLImageElement;
    expect(img.src).toBe(urls[urls.length - 1]); // latest frame displayed
  });

  it("issues at most 3 requests for 20 rapid slider events", async () => {
    vi.useFakeTimers();
    const server = fakeServer();
    const studio = new Studio(new ApiClient("http://s", server.fetchFn));
    await studio.connect();
    await settle();
    const before = studio.scheduler.issued;
    const slider = studio.root.querySelectorAll(
      ".slider-row input",
    )[0] as HTMLInputElement;
    for (let i = 0; i < 20; i++) {
      slider.value = String(i / 20);
      slider.dispatchEvent(new Event("input"));
      await vi.advanceTimersByTimeAsync(5);
    }
    await settle(300);
    expect(studio.scheduler.issued - before).toBeLessThanOrEqual(3);
    const last = server.renders[server.renders.length - 1];
    expect(last.coefficients[0]).toBeCloseTo(19 / 20);
  });

  it("flags sliders outside the training range", async () => {
    vi.useFakeTimers();
    const server = fakeServer();
    const studio = new Studio(new ApiClient("http://s", server.fetchFn));
    await studio.connect();
    await settle();
    const slider = studio.root.querySelectorAll(
      ".slider-row input",
    )[2] as HTMLInputElement;
    slider.value = "1.4"; // beyond coeff_max = 1
    slider.dispatchEvent(new Event("input"));
    await settle();
    const flags = studio.root.querySelectorAll(".range-flag");
    expect(flags[2].classList.contains("hidden")).toBe(false);
    expect(flags[0].classList.contains("hidden")).toBe(true);
  });

  it("plays a 100-frame stream in order without stale frames", async () => {
    vi.useFakeTimers();
    const server = fakeServer();
    const studio = new Studio(new ApiClient("http://s", server.fetchFn));
    await studio.connect();
    await settle();
    const text = Array.from({ length: 100 }, (_, i) =>
      [i / 100, 0, 0, 0].join(" "),
    ).join("\n");
    studio.loadStreamText(text);
    expect(studio.playback!.length).toBe(100);
    const scrubber = studio.root.querySelector(
      ".stream input[type=range]",
    ) as HTMLInputElement;
    expect(scrubber.max).toBe("99");
    const displayCount = urls.length;
    await studio.playback!.play();
    await settle();
    expect(urls.length - displayCount).toBe(100);
    expect(scrubber.value).toBe("99");
    // sliders track the final frame (editing feeds back from here)
    expect(studio.state.coeffs[0]).toBeCloseTo(0.99);
  });

  it("rejects malformed stream rows with line numbers", async () => {
    vi.useFakeTimers();
    const server = fakeServer();
    const studio = new Studio(new ApiClient("http://s", server.fetchFn));
    await studio.connect();
    await settle();
    studio.loadStreamText("0 0 0 0\n0 0\n");
    expect(studio.playback).toBeNull();
    const banner = studio.root.querySelector(".banner")!;
    expect(banner.textContent).toMatch(/line 2/);
  });
});
