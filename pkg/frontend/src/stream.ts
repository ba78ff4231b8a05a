/** Coefficient stream files: one line per frame, K space-separated floats. */

export interface StreamError {
  line: number; // 1-based line number in the file
  message: string;
}

export interface ParsedStream {
  rows: number[][];
  errors: StreamError[];
}

export function parseCoefficientStream(text: string, k: number): ParsedStream {
  const rows: number[][] = [];
  const errors: StreamError[] = [];
  const lines = text.split(/\r?\n/);
  lines.forEach((raw, idx) => {
    const line = raw.trim();
    if (line === "") return;
    const parts = line.split(/[\s,]+/);
    const values = parts.map(Number);
    if (values.some((v) => !Number.isFinite(v))) {
      errors.push({ line: idx + 1, message: "non-numeric value" });
      return;
    }
    if (values.length !== k) {
      errors.push({
        line: idx + 1,
        message: `expected ${k} coefficients, got ${values.length}`,
      });
      return;
    }
    rows.push(values);
  });
  return { rows, errors };
}

export interface PlaybackHooks {
  /** Render a chunk of coefficient rows; returns one PNG base64 per row. */
  renderChunk: (rows: number[][]) => Promise<string[]>;
  /** Display frame i with its image data. */
  show: (index: number, pngBase64: string) => void;
}

/** Sequential playback over a coefficient stream with hand-editing.
 *
 * Frames render in chunks through /render_batch; edits write back into the
 * stream so scrubbing returns to the edited expression. A generation guard
 * drops chunk results that finish after a seek/stop, so a stale frame is
 * never shown.
 */
export class Playback {
  position = 0;
  playing = false;
  private generation = 0;

  constructor(
    public rows: number[][],
    private readonly hooks: PlaybackHooks,
    private readonly chunkSize = 8,
  ) {}

  get length(): number {
    return this.rows.length;
  }

  editRow(index: number, coeffs: number[]): void {
    if (index < 0 || index >= this.rows.length) {
      throw new RangeError(`row ${index} out of range`);
    }
    this.rows[index] = [...coeffs];
  }

  stop(): void {
    this.playing = false;
    this.generation += 1;
  }

  async seek(index: number): Promise<void> {
    this.stop();
    this.position = Math.max(0, Math.min(index, this.rows.length - 1));
    const gen = this.generation;
    const frames = await this.hooks.renderChunk([this.rows[this.position]]);
    if (gen === this.generation) {
      this.hooks.show(this.position, frames[0]);
    }
  }

  /** Play from the current position to the end; resolves when done. */
  async play(): Promise<void> {
    this.playing = true;
    const gen = ++this.generation;
    while (this.playing && this.position < this.rows.length) {
      const start = this.position;
      const chunk = this.rows.slice(start, start + this.chunkSize);
      const frames = await this.hooks.renderChunk(chunk);
      if (gen !== this.generation) return; // superseded by seek/stop
      for (let i = 0; i < frames.length; i++) {
        if (!this.playing || gen !== this.generation) return;
        this.position = start + i;
        this.hooks.show(this.position, frames[i]);
      }
      this.position = start + frames.length;
    }
    this.playing = false;
  }
}
