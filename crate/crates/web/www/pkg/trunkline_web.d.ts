/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Annotated calls as JSON `[{start, end, label}]`.
     */
    annotations(): string;
    curves(): string;
    duration(): number;
    endpoint(theta: number): string;
    constructor(seed: number, snr_db: number);
    probabilities(): Float64Array;
    spectrogram_bins(): number;
    /**
     * Log-mel frames (10 ms hop), row-major `frames x bins`.
     */
    spectrogram(): Float32Array;
    spectrogram_frames(): number;
    /**
     * Start time of the first probability; one value per 100 ms after that.
     */
    track_start(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_annotations: (a: number) => [number, number];
    readonly demo_curves: (a: number) => [number, number, number, number];
    readonly demo_duration: (a: number) => number;
    readonly demo_endpoint: (a: number, b: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_probabilities: (a: number) => [number, number];
    readonly demo_spectrogram: (a: number) => [number, number];
    readonly demo_spectrogram_bins: (a: number) => number;
    readonly demo_spectrogram_frames: (a: number) => number;
    readonly demo_track_start: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
