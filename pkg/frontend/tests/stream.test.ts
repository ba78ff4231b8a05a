import { describe, expect, it } from "vitest";
import { Playback, parseCoefficientStream } from "../src/stream.js";

describe("parseCoefficientStream", () => {
  it("parses one row of k floats per line", () => {
    const out = parseCoefficientStream("0 0 0\n0.5 0.25 1\n", 3);
    expect(out.errors).toHaveLength(0);
    expect(out.rows).toEqual([
      [0, 0, 0],
      [0.5, 0.25, 1],
    ]);
  });

  it("accepts commas and extra whitespace, skips blank lines", () => {
    const out = parseCoefficientStream("  1, 2\n\n3 4  \n", 2);
    expect(out.rows).toEqual([
      [1, 2],
      [3, 4],
    ]);
  });

  it("reports wrong arity with line numbers", () => {
    const out = parseCoefficientStream("1 2\n1 2 3\n4 5\n", 2);
    expect(out.rows).toHaveLength(2);
    expect(out.errors).toEqual([
      { line: 2, message: "expected 2 coefficients, got 3" },
    ]);
  });

  it("reports non-numeric rows", () => {
    const out = parseCoefficientStream("1 x\n", 2);
    expect(out.errors[0].line).toBe(1);
    expect(out.errors[0].message).toMatch(/non-numeric/);
  });

  it("keeps 100 rows as 100 positions", () => {
    const text = Array.from({ length: 100 }, (_, i) => `${i * 0.01} 0`).join("\n");
    const out = parseCoefficientStream(text, 2);
    expect(out.rows).toHaveLength(100);
  });
});

function playbackHarness(rows: number[][], chunkSize = 8) {
  const shown: Array<[number, string]> = [];
  const chunkCalls: number[][][] = [];
  const playback = new Playback(
    rows,
    {
      renderChunk: async (chunk) => {
        chunkCalls.push(chunk.map((r) => [...r]));
        return chunk.map((r) => `png:${r.join(",")}`);
      },
      show: (i, png) => shown.push([i, png]),
    },
    chunkSize,
  );
  return { playback, shown, chunkCalls };
}

describe("Playback", () => {
  it("plays every frame in order without stale display", async () => {
    const rows = Array.from({ length: 100 }, (_, i) => [i, 0]);
    const { playback, shown } = playbackHarness(rows);
    await playback.play();
    expect(shown).toHaveLength(100);
    expect(shown.map(([i]) => i)).toEqual(rows.map((_, i) => i));
    // each displayed frame corresponds exactly to its row
    for (const [i, png] of shown) {
      expect(png).toBe(`png:${rows[i].join(",")}`);
    }
    expect(playback.playing).toBe(false);
  });

  it("pause stops mid-stream", async () => {
    const rows = Array.from({ length: 40 }, (_, i) => [i]);
    const { playback, shown } = playbackHarness(rows, 4);
    const done = playback.play();
    await Promise.resolve(); // let the first chunk render
    playback.stop();
    await done;
    expect(shown.length).toBeLessThan(40);
  });

  it("seek supersedes an in-progress play", async () => {
    const rows = Array.from({ length: 16 }, (_, i) => [i]);
    const { playback, shown } = playbackHarness(rows, 4);
    const done = playback.play();
    await playback.seek(9);
    await done;
    // the last displayed frame is the seek target, not a stale play frame
    expect(shown[shown.length - 1][0]).toBe(9);
  });

  it("hand edits feed back into the stream", async () => {
    const rows = [
      [0, 0],
      [1, 1],
    ];
    const { playback, shown } = playbackHarness(rows, 2);
    playback.editRow(1, [0.25, 0.75]);
    await playback.seek(1);
    expect(shown[shown.length - 1][1]).toBe("png:0.25,0.75");
  });

  it("rejects out-of-range edits", () => {
    const { playback } = playbackHarness([[0]]);
    expect(() => playback.editRow(5, [1])).toThrow(RangeError);
  });
});
