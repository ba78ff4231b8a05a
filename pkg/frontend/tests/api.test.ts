import { describe, expect, it } from "vitest";
import { ApiClient, ApiError, base64ToBlob } from "../src/api.js";

const META = {
  k: 4,
  width: 64,
  height: 64,
  coeff_min: [0, 0, 0, 0],
  coeff_max: [1, 0.9, 0.8, 1],
};

function mockFetch(
  handler: (url: string, init?: RequestInit) => Response | Promise<Response>,
): typeof fetch {
  return ((url: RequestInfo | URL, init?: RequestInit) =>
    Promise.resolve(handler(String(url), init))) as typeof fetch;
}

describe("ApiClient", () => {
  it("fetches /meta", async () => {
    const client = new ApiClient(
      "http://server:1234/",
      mockFetch((url) => {
        expect(url).toBe("http://server:1234/meta");
        return new Response(JSON.stringify(META));
      }),
    );
    const meta = await client.getMeta();
    expect(meta.k).toBe(4);
    expect(meta.coeff_max[1]).toBeCloseTo(0.9);
  });

  it("posts coefficients and reads latency and range headers", async () => {
    const png = new Uint8Array([137, 80, 78, 71, 13, 10, 26, 10, 1, 2, 3]);
    const client = new ApiClient(
      "http://s",
      mockFetch((url, init) => {
        expect(url).toBe("http://s/render");
        const body = JSON.parse(String(init?.body));
        expect(body.coefficients).toEqual([0, 0, 0, 2]);
        expect(body.camera.pose).toHaveLength(16);
        return new Response(png, {
          headers: {
            "content-type": "image/png",
            "X-Render-Ms": "12.5",
            "X-Coeff-Out-Of-Range": "3",
          },
        });
      }),
    );
    const result = await client.render({
      coefficients: [0, 0, 0, 2],
      camera: { pose: new Array(16).fill(0), fov_deg: 40 },
    });
    expect(result.renderMs).toBeCloseTo(12.5);
    expect(result.outOfRange).toEqual([3]);
    expect(new Uint8Array(await result.blob.arrayBuffer())).toEqual(png);
  });

  it("raises ApiError with the server's field on 4xx", async () => {
    const client = new ApiClient(
      "http://s",
      mockFetch(
        () =>
          new Response(
            JSON.stringify({ error: "coefficients must have length 4", field: "coefficients" }),
            { status: 400 },
          ),
      ),
    );
    await expect(client.render({ coefficients: [1] })).rejects.toMatchObject({
      field: "coefficients",
      status: 400,
    });
    await expect(client.render({ coefficients: [1] })).rejects.toBeInstanceOf(
      ApiError,
    );
  });

  it("renders batches and decodes base64 frames", async () => {
    const payload = { frames: [btoa("ab"), btoa("cd")], render_ms: [1, 2] };
    const client = new ApiClient(
      "http://s",
      mockFetch((url) => {
        expect(url).toBe("http://s/render_batch");
        return new Response(JSON.stringify(payload));
      }),
    );
    const out = await client.renderBatch([[0], [1]]);
    expect(out.frames).toHaveLength(2);
    const blob = base64ToBlob(out.frames[0]);
    expect(await blob.text()).toBe("ab");
  });
});
