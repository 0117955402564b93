/** Thin typed client over the render service HTTP endpoints. */

import type {
  RenderRequestBody,
  RenderResponse,
  ServiceInfo,
  TrajectoryListing,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class RenderClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  async info(): Promise<ServiceInfo> {
    const r = await this.fetchImpl(`${this.baseUrl}/info`);
    if (!r.ok) throw new Error(`info failed: ${r.status}`);
    return (await r.json()) as ServiceInfo;
  }

  async trajectories(): Promise<TrajectoryListing> {
    const r = await this.fetchImpl(`${this.baseUrl}/trajectories`);
    if (!r.ok) throw new Error(`trajectories failed: ${r.status}`);
    return (await r.json()) as TrajectoryListing;
  }

  async render(body: RenderRequestBody): Promise<RenderResponse> {
    const r = await this.fetchImpl(`${this.baseUrl}/render`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!r.ok) throw new Error(`render failed: ${r.status}`);
    const buf = new Uint8Array(await r.arrayBuffer());
    return {
      bytes: buf,
      renderMs: Number(r.headers.get("x-render-ms") ?? "0"),
      blockId: r.headers.get("x-block-id") ?? "",
      seed: Number(r.headers.get("x-seed") ?? "0"),
    };
  }
}
