// DOM shell: threshold slider with debounced fetches, side-by-side original
// vs pruned panes, metric readouts and a session curve canvas. All numbers
// come straight from the service payloads.

import { ApiClient, LatestGate } from './client.js';
import {
    ViewerState,
    applyInfo,
    applyMetrics,
    beginRequest,
    curveSortedByTau,
    initialState,
    makeDebouncer,
    markStale,
    selectCamera,
    setTau,
    toggleHeatmap,
} from './state.js';

const DEBOUNCE_MS = 150;

function el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing #${id}`);
    return node as T;
}

function fmt(x: number | 'inf' | undefined, digits = 3): string {
    if (x === undefined) return '–';
    if (x === 'inf') return '∞';
    return x.toFixed(digits);
}

export function startViewer(baseUrl: string): void {
    const client = new ApiClient(baseUrl);
    const gate = new LatestGate();
    let state: ViewerState = initialState();

    const slider = el<HTMLInputElement>('tau-slider');
    const tauLabel = el<HTMLSpanElement>('tau-value');
    const keptLabel = el<HTMLSpanElement>('kept-value');
    const acsLabel = el<HTMLSpanElement>('acs-value');
    const psnrLabel = el<HTMLSpanElement>('psnr-value');
    const sqrLabel = el<HTMLSpanElement>('sqr-value');
    const currentPane = el<HTMLImageElement>('current-pane');
    const originalPane = el<HTMLImageElement>('original-pane');
    const heatmapBox = el<HTMLInputElement>('heatmap-toggle');
    const cameraSelect = el<HTMLSelectElement>('camera-select');
    const staleBadge = el<HTMLSpanElement>('stale-badge');
    const toast = el<HTMLDivElement>('toast');
    const chart = el<HTMLCanvasElement>('curve-chart');

    let currentUrl: string | null = null;
    let originalUrl: string | null = null;

    function showToast(message: string): void {
        toast.textContent = message;
        toast.classList.add('visible');
        setTimeout(() => toast.classList.remove('visible'), 2500);
    }

    function setPane(pane: HTMLImageElement, bytes: ArrayBuffer, keep: 'current' | 'original'): void {
        const url = URL.createObjectURL(new Blob([bytes], { type: 'image/png' }));
        if (keep === 'current' && currentUrl) URL.revokeObjectURL(currentUrl);
        if (keep === 'original' && originalUrl) URL.revokeObjectURL(originalUrl);
        if (keep === 'current') currentUrl = url;
        else originalUrl = url;
        pane.src = url;
    }

    function drawCurve(): void {
        const ctx = chart.getContext('2d');
        if (!ctx || !state.info) return;
        const points = curveSortedByTau(state);
        const w = chart.width;
        const h = chart.height;
        ctx.clearRect(0, 0, w, h);
        ctx.strokeStyle = '#888';
        ctx.strokeRect(0.5, 0.5, w - 1, h - 1);
        if (points.length === 0) return;
        const n = state.info.n_splats;
        ctx.strokeStyle = '#4c78a8';
        ctx.beginPath();
        points.forEach((p, i) => {
            const x = 4 + p.tau * (w - 8);
            const y = h - 4 - (p.kept / n) * (h - 8);
            if (i === 0) ctx.moveTo(x, y);
            else ctx.lineTo(x, y);
        });
        ctx.stroke();
    }

    function updateReadouts(): void {
        tauLabel.textContent = state.tau.toFixed(2);
        const m = state.lastMetrics;
        keptLabel.textContent = m ? String(m.kept) : '–';
        acsLabel.textContent = m ? fmt(m.acs) : '–';
        psnrLabel.textContent = m ? fmt(m.psnr, 2) : '–';
        sqrLabel.textContent = m ? fmt(m.sqr, 4) : '–';
        staleBadge.style.display = state.stale ? 'inline' : 'none';
    }

    function refresh(): void {
        if (state.cameraId === null) return;
        const camId = state.cameraId;
        const tau = state.tau;
        const heatmap = state.heatmap;
        const issued = beginRequest(state);
        state = issued.state;
        void gate.run(async () => {
            try {
                const [bytes, metrics] = await Promise.all([
                    client.fetchRender(camId, tau, heatmap),
                    client.fetchMetrics(tau),
                ]);
                state = applyMetrics(state, issued.seq, metrics);
                setPane(currentPane, bytes, 'current');
                updateReadouts();
                drawCurve();
            } catch (err) {
                state = markStale(state);
                updateReadouts();
                showToast(`request failed: ${String(err)}`);
            }
        });
    }

    const debouncedRefresh = makeDebouncer(DEBOUNCE_MS, {
        set: (fn, ms) => setTimeout(fn, ms),
        clear: (handle) => clearTimeout(handle as number),
    });

    slider.addEventListener('input', () => {
        state = setTau(state, Number(slider.value));
        tauLabel.textContent = state.tau.toFixed(2);
        debouncedRefresh(refresh);
    });

    heatmapBox.addEventListener('change', () => {
        state = toggleHeatmap(state);
        refresh();
    });

    cameraSelect.addEventListener('change', () => {
        state = selectCamera(state, Number(cameraSelect.value));
        void loadOriginal();
        refresh();
    });

    async function loadOriginal(): Promise<void> {
        // the comparison pane always shows tau = 0 for the same camera
        if (state.cameraId === null) return;
        try {
            const bytes = await client.fetchRender(state.cameraId, 0, false);
            setPane(originalPane, bytes, 'original');
        } catch (err) {
            showToast(`original pane failed: ${String(err)}`);
        }
    }

    void (async () => {
        try {
            const info = await client.fetchInfo();
            state = applyInfo(state, info);
            cameraSelect.innerHTML = '';
            for (const cam of info.cameras) {
                const opt = document.createElement('option');
                opt.value = String(cam.id);
                opt.textContent = `camera ${cam.id} (${cam.width}x${cam.height})`;
                cameraSelect.appendChild(opt);
            }
            el<HTMLSpanElement>('scene-splats').textContent = String(info.n_splats);
            el<HTMLSpanElement>('scene-acs').textContent = info.acs.toFixed(4);
            await loadOriginal();
            refresh();
        } catch (err) {
            showToast(`service unreachable: ${String(err)}`);
        }
    })();
}

declare global {
    interface Window {
        CONFSPLAT_API?: string;
    }
}

if (typeof document !== 'undefined' && document.getElementById('tau-slider')) {
    startViewer(window.CONFSPLAT_API ?? 'http://127.0.0.1:8080');
}
