// Pure viewer state: no DOM, no network. The UI shell and the tests both
// drive these functions; every displayed number originates from a service
// payload, never from client-side computation.

export interface CameraInfo {
    id: number;
    width: number;
    height: number;
}

export interface SceneInfo {
    n_splats: number;
    sh_degree: number;
    acs: number;
    active_count: number;
    cameras: CameraInfo[];
}

export interface Metrics {
    tau: number;
    kept: number;
    acs: number;
    sqr?: number;
    psnr?: number | 'inf';
    ssim?: number;
}

export interface CurvePoint {
    tau: number;
    kept: number;
    psnr?: number;
}

export interface ViewerState {
    tau: number;
    cameraId: number | null;
    heatmap: boolean;
    info: SceneInfo | null;
    lastMetrics: Metrics | null;
    curve: CurvePoint[];
    issuedSeq: number;   // most recent request sequence number
    appliedSeq: number;  // most recent response applied to the UI
    stale: boolean;      // a fetch failed; the displayed frame is old
}

export function initialState(): ViewerState {
    return {
        tau: 0,
        cameraId: null,
        heatmap: false,
        info: null,
        lastMetrics: null,
        curve: [],
        issuedSeq: 0,
        appliedSeq: 0,
        stale: false,
    };
}

export function clampTau(tau: number): number {
    if (Number.isNaN(tau)) return 0;
    return Math.min(1, Math.max(0, tau));
}

export function applyInfo(state: ViewerState, info: SceneInfo): ViewerState {
    const cameraId =
        state.cameraId !== null && info.cameras.some((c) => c.id === state.cameraId)
            ? state.cameraId
            : info.cameras.length > 0
              ? info.cameras[0].id
              : null;
    return { ...state, info, cameraId };
}

export function selectCamera(state: ViewerState, id: number): ViewerState {
    if (!state.info || !state.info.cameras.some((c) => c.id === id)) {
        return state; // unknown ids are never selectable
    }
    return { ...state, cameraId: id };
}

export function setTau(state: ViewerState, tau: number): ViewerState {
    return { ...state, tau: clampTau(tau) };
}

export function toggleHeatmap(state: ViewerState): ViewerState {
    return { ...state, heatmap: !state.heatmap };
}

export function beginRequest(state: ViewerState): { state: ViewerState; seq: number } {
    const seq = state.issuedSeq + 1;
    return { state: { ...state, issuedSeq: seq }, seq };
}

// Responses apply in issue order; anything older than what is already on
// screen is dropped.
export function applyMetrics(state: ViewerState, seq: number, metrics: Metrics): ViewerState {
    if (seq <= state.appliedSeq) {
        return state;
    }
    const point: CurvePoint = { tau: metrics.tau, kept: metrics.kept };
    if (typeof metrics.psnr === 'number') {
        point.psnr = metrics.psnr;
    }
    return {
        ...state,
        lastMetrics: metrics,
        appliedSeq: seq,
        stale: false,
        curve: [...state.curve, point],
    };
}

export function markStale(state: ViewerState): ViewerState {
    return { ...state, stale: true };
}

// Session curve restricted to the user's upward drags: kept counts must be
// non-increasing in tau, which holds because pruning is a nested filter.
export function curveSortedByTau(state: ViewerState): CurvePoint[] {
    return [...state.curve].sort((a, b) => a.tau - b.tau || a.kept - b.kept);
}

export function renderKey(cameraId: number, tau: number, heatmap: boolean): string {
    // mirror the service's 1e-3 cache quantization
    return `${cameraId}:${Math.round(clampTau(tau) * 1000)}:${heatmap ? 1 : 0}`;
}

export interface Scheduler {
    set(fn: () => void, delayMs: number): unknown;
    clear(handle: unknown): void;
}

// Trailing-edge debouncer with an injectable clock so tests can drive time.
export function makeDebouncer(delayMs: number, scheduler: Scheduler): (fn: () => void) => void {
    let pending: unknown = null;
    return (fn: () => void) => {
        if (pending !== null) {
            scheduler.clear(pending);
        }
        pending = scheduler.set(() => {
            pending = null;
            fn();
        }, delayMs);
    };
}
