/** DOM construction and wiring for the control room. */

import { ApiClient, ApiError, base64ToBlob, type Meta } from "./api.js";
import { RenderScheduler } from "./debounce.js";
import { clampOrbit, orbitPose } from "./orbit.js";
import {
  initialState,
  outOfRangeFlags,
  renderResolution,
  sliderBounds,
  type SessionState,
} from "./state.js";
import { parseCoefficientStream, Playback } from "./stream.js";

export interface StudioOptions {
  debounceMs?: number;
  doc?: Document;
}

export class Studio {
  readonly root: HTMLElement;
  state!: SessionState;
  meta!: Meta;
  scheduler!: RenderScheduler<SessionState, { blob: Blob; renderMs: number; outOfRange: number[] }>;
  playback: Playback | null = null;
  private doc: Document;
  private sliders: HTMLInputElement[] = [];
  private sliderFlags: HTMLElement[] = [];
  private frame!: HTMLImageElement;
  private banner!: HTMLElement;
  private latency!: HTMLElement;
  private scrubber!: HTMLInputElement;
  private lastUrl: string | null = null;

  constructor(
    readonly api: ApiClient,
    options: StudioOptions = {},
  ) {
    this.doc = options.doc ?? document;
    this.root = this.doc.createElement("div");
    this.root.className = "studio";
    this.scheduler = new RenderScheduler(
      {
        run: (state) => {
          const { width, height } = renderResolution(state);
          return this.api.render({
            coefficients: [...state.coeffs],
            camera: {
              pose: orbitPose(state.orbit),
              fov_deg: state.orbit.fovDeg,
            },
            width,
            height,
          });
        },
        onResult: (state, result) => this.showFrame(state, result),
        onError: (_state, error) => this.showError(error),
      },
      options.debounceMs ?? 50,
    );
  }

  /** Fetch /meta, build the panel, and render the neutral frame. */
  async connect(): Promise<void> {
    this.buildShell();
    let meta: Meta;
    try {
      meta = await this.api.getMeta();
    } catch (error) {
      this.showError(error);
      this.addRetry();
      return;
    }
    this.meta = meta;
    this.state = initialState(meta);
    this.buildControls();
    this.scheduler.request({ ...this.state });
  }

  private buildShell(): void {
    this.banner = this.doc.createElement("div");
    this.banner.className = "banner hidden";
    this.root.appendChild(this.banner);
    this.frame = this.doc.createElement("img");
    this.frame.className = "frame";
    this.frame.alt = "rendered avatar frame";
    this.root.appendChild(this.frame);
    this.latency = this.doc.createElement("div");
    this.latency.className = "latency";
    this.root.appendChild(this.latency);
  }

  private addRetry(): void {
    const btn = this.doc.createElement("button");
    btn.textContent = "retry";
    btn.className = "retry";
    btn.addEventListener("click", () => {
      this.root.innerHTML = "";
      void this.connect();
    });
    this.root.appendChild(btn);
  }

  private buildControls(): void {
    const panel = this.doc.createElement("div");
    panel.className = "sliders";
    this.sliders = [];
    this.sliderFlags = [];
    for (let i = 0; i < this.meta.k; i++) {
      const row = this.doc.createElement("label");
      row.className = "slider-row";
      const name = this.doc.createElement("span");
      name.textContent = `w${i}`;
      const input = this.doc.createElement("input");
      input.type = "range";
      const bounds = sliderBounds(this.meta, i);
      input.min = String(bounds.min);
      input.max = String(bounds.max);
      input.step = "0.01";
      input.value = "0";
      input.addEventListener("input", () => {
        this.state.coeffs[i] = parseFloat(input.value);
        this.onStateChange();
      });
      const flag = this.doc.createElement("span");
      flag.className = "range-flag hidden";
      flag.textContent = "outside training range";
      row.append(name, input, flag);
      panel.appendChild(row);
      this.sliders.push(input);
      this.sliderFlags.push(flag);
    }
    this.root.appendChild(panel);

    const orbitPanel = this.doc.createElement("div");
    orbitPanel.className = "orbit";
    const fields: Array<[keyof SessionState["orbit"], number, number, number]> = [
      ["azimuthDeg", 0, 360, 1],
      ["elevationDeg", -89, 89, 1],
      ["distance", 0.5, 6, 0.05],
      ["fovDeg", 10, 90, 1],
    ];
    for (const [key, min, max, step] of fields) {
      const row = this.doc.createElement("label");
      row.className = "orbit-row";
      const name = this.doc.createElement("span");
      name.textContent = String(key);
      const input = this.doc.createElement("input");
      input.type = "range";
      input.min = String(min);
      input.max = String(max);
      input.step = String(step);
      input.value = String(this.state.orbit[key]);
      input.addEventListener("input", () => {
        this.state.orbit = clampOrbit({
          ...this.state.orbit,
          [key]: parseFloat(input.value),
        });
        this.onStateChange();
      });
      row.append(name, input);
      orbitPanel.appendChild(row);
    }
    this.root.appendChild(orbitPanel);

    const streamPanel = this.doc.createElement("div");
    streamPanel.className = "stream";
    const file = this.doc.createElement("input");
    file.type = "file";
    file.accept = ".txt,.csv";
    file.addEventListener("change", () => {
      const f = file.files?.[0];
      if (f) void this.loadStreamFile(f);
    });
    this.scrubber = this.doc.createElement("input");
    this.scrubber.type = "range";
    this.scrubber.min = "0";
    this.scrubber.max = "0";
    this.scrubber.step = "1";
    this.scrubber.value = "0";
    this.scrubber.disabled = true;
    this.scrubber.addEventListener("input", () => {
      void this.playback?.seek(parseInt(this.scrubber.value, 10));
    });
    const play = this.doc.createElement("button");
    play.textContent = "play";
    play.addEventListener("click", () => {
      void this.playback?.play();
    });
    const pause = this.doc.createElement("button");
    pause.textContent = "pause";
    pause.addEventListener("click", () => this.playback?.stop());
    streamPanel.append(file, this.scrubber, play, pause);
    this.root.appendChild(streamPanel);
  }

  private onStateChange(): void {
    this.playback?.stop();
    const flags = outOfRangeFlags(this.state.coeffs, this.meta);
    flags.forEach((on, i) => {
      this.sliderFlags[i].classList.toggle("hidden", !on);
    });
    this.scheduler.request({
      ...this.state,
      coeffs: [...this.state.coeffs],
      orbit: { ...this.state.orbit },
    });
  }

  private showBlob(blob: Blob): void {
    const url = URL.createObjectURL(blob);
    if (this.lastUrl) URL.revokeObjectURL(this.lastUrl);
    this.lastUrl = url;
    this.frame.src = url;
  }

  private showFrame(
    _state: SessionState,
    result: { blob: Blob; renderMs: number; outOfRange: number[] },
  ): void {
    this.banner.classList.add("hidden");
    this.showBlob(result.blob);
    this.state.lastLatencyMs = result.renderMs;
    this.latency.textContent = `render ${result.renderMs.toFixed(1)} ms`;
  }

  private showError(error: unknown): void {
    const message =
      error instanceof ApiError
        ? `${error.message}${error.field ? ` (${error.field})` : ""}`
        : String(error);
    this.banner.textContent = `server error: ${message}`;
    this.banner.classList.remove("hidden");
  }

  /** Load a coefficient stream and enter playback mode. */
  async loadStreamFile(file: { text(): Promise<string> }): Promise<void> {
    const text = await file.text();
    this.loadStreamText(text);
  }

  loadStreamText(text: string): void {
    const parsed = parseCoefficientStream(text, this.meta.k);
    if (parsed.errors.length) {
      const lines = parsed.errors
        .map((e) => `line ${e.line}: ${e.message}`)
        .join("; ");
      this.showError(new ApiError(`stream rejected: ${lines}`, null, 0));
      return;
    }
    this.playback = new Playback(parsed.rows, {
      renderChunk: async (rows) => {
        const out = await this.api.renderBatch(rows, {
          width: this.state.width,
          height: this.state.height,
        });
        return out.frames;
      },
      show: (index, png) => {
        this.scrubber.value = String(index);
        // editing feeds back: sliders track the frame being shown
        this.state.coeffs = [...this.playback!.rows[index]];
        this.sliders.forEach((s, i) => {
          s.value = String(this.state.coeffs[i]);
        });
        this.showBlob(base64ToBlob(png));
      },
    });
    this.scrubber.disabled = false;
    this.scrubber.max = String(this.playback.length - 1);
  }

  /** Hand-edit the current playback frame with the slider values. */
  commitEditToStream(): void {
    if (!this.playback) return;
    this.playback.editRow(this.playback.position, this.state.coeffs);
  }
}

export async function connect(
  serverUrl: string,
  mount: HTMLElement,
  options: StudioOptions = {},
): Promise<Studio> {
  const studio = new Studio(new ApiClient(serverUrl), options);
  await studio.connect();
  mount.appendChild(studio.root);
  return studio;
}
