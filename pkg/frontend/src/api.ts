/** Typed client for the render service HTTP API. */

export interface Meta {
  k: number;
  width: number;
  height: number;
  coeff_min: number[];
  coeff_max: number[];
  mode?: string;
}

export interface CameraSpec {
  pose: number[]; // 16 floats, row-major world-from-camera
  fov_deg: number;
}

export interface RenderRequest {
  coefficients: number[];
  camera?: CameraSpec;
  width?: number;
  height?: number;
}

export interface RenderResult {
  blob: Blob;
  renderMs: number;
  outOfRange: number[];
}

export class ApiError extends Error {
  constructor(
    message: string,
    readonly field: string | null,
    readonly status: number,
  ) {
    super(message);
  }
}

async function raiseApiError(resp: Response): Promise<never> {
  let message = `${resp.status} ${resp.statusText}`;
  let field: string | null = null;
  try {
    const body = await resp.json();
    if (body && typeof body.error === "string") {
      message = body.error;
      field = body.field ?? null;
    }
  } catch {
    /* non-JSON error body */
  }
  throw new ApiError(message, field, resp.status);
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/+$/, "") + path;
  }

  async getMeta(): Promise<Meta> {
    const resp = await this.fetchFn(this.url("/meta"));
    if (!resp.ok) await raiseApiError(resp);
    return (await resp.json()) as Meta;
  }

  async render(req: RenderRequest): Promise<RenderResult> {
    const resp = await this.fetchFn(this.url("/render"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
    if (!resp.ok) await raiseApiError(resp);
    const blob = await resp.blob();
    const renderMs = parseFloat(resp.headers.get("X-Render-Ms") ?? "NaN");
    const flagged = resp.headers.get("X-Coeff-Out-Of-Range");
    const outOfRange = flagged
      ? flagged.split(",").map((v) => parseInt(v, 10))
      : [];
    return { blob, renderMs, outOfRange };
  }

  async renderBatch(
    rows: number[][],
    opts: Omit<RenderRequest, "coefficients"> = {},
  ): Promise<{ frames: string[]; renderMs: number[] }> {
    const resp = await this.fetchFn(this.url("/render_batch"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ ...opts, coefficients: rows }),
    });
    if (!resp.ok) await raiseApiError(resp);
    return (await resp.json()) as { frames: string[]; renderMs: number[] };
  }
}

/** Decode a base64 PNG from /render_batch into a Blob. */
export function base64ToBlob(b64: string, type = "image/png"): Blob {
  const bin = atob(b64);
  const bytes = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) bytes[i] = bin.charCodeAt(i);
  return new Blob([bytes], { type });
}
