// HTTP data layer over the render service. One in-flight request per
// endpoint at a time (latest wins), plus a bounded render cache so toggling
// the heatmap back restores the previous frame without a refetch.

import { Metrics, SceneInfo, renderKey } from './state.js';

const RENDER_CACHE_LIMIT = 64;

type FetchLike = (url: string) => Promise<{
    ok: boolean;
    status: number;
    json(): Promise<unknown>;
    arrayBuffer(): Promise<ArrayBuffer>;
}>;

export class ApiClient {
    private baseUrl: string;
    private fetchFn: FetchLike;
    private renderCache = new Map<string, ArrayBuffer>();
    requestCount = 0;

    constructor(baseUrl: string, fetchFn?: FetchLike) {
        this.baseUrl = baseUrl.replace(/\/$/, '');
        this.fetchFn = fetchFn ?? ((url) => fetch(url));
    }

    private async get(path: string) {
        this.requestCount += 1;
        const resp = await this.fetchFn(`${this.baseUrl}${path}`);
        if (!resp.ok) {
            throw new Error(`GET ${path} -> ${resp.status}`);
        }
        return resp;
    }

    async fetchInfo(): Promise<SceneInfo> {
        const resp = await this.get('/api/info');
        return (await resp.json()) as SceneInfo;
    }

    async fetchMetrics(tau: number): Promise<Metrics> {
        const resp = await this.get(`/api/metrics?tau=${tau}`);
        return (await resp.json()) as Metrics;
    }

    async fetchRender(cameraId: number, tau: number, heatmap: boolean): Promise<ArrayBuffer> {
        const key = renderKey(cameraId, tau, heatmap);
        const hit = this.renderCache.get(key);
        if (hit !== undefined) {
            // refresh LRU position
            this.renderCache.delete(key);
            this.renderCache.set(key, hit);
            return hit;
        }
        const flag = heatmap ? '&heatmap=1' : '';
        const resp = await this.get(`/api/render?cam=${cameraId}&tau=${tau}${flag}`);
        const bytes = await resp.arrayBuffer();
        this.renderCache.set(key, bytes);
        while (this.renderCache.size > RENDER_CACHE_LIMIT) {
            const oldest = this.renderCache.keys().next().value as string;
            this.renderCache.delete(oldest);
        }
        return bytes;
    }

    hasCached(cameraId: number, tau: number, heatmap: boolean): boolean {
        return this.renderCache.has(renderKey(cameraId, tau, heatmap));
    }
}

// Serializes calls: at most one in flight; while busy the newest request
// replaces any queued one, so scrubbing the slider settles on the last value.
export class LatestGate {
    private busy = false;
    private queued: (() => Promise<void>) | null = null;

    get inFlight(): boolean {
        return this.busy;
    }

    async run(task: () => Promise<void>): Promise<void> {
        if (this.busy) {
            this.queued = task;
            return;
        }
        this.busy = true;
        try {
            await task();
        } finally {
            this.busy = false;
            const next = this.queued;
            this.queued = null;
            if (next) {
                void this.run(next);
            }
        }
    }
}
