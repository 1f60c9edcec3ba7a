/* tslint:disable */
/* eslint-disable */

/**
 * Models trained on synthetic data, kept alive between calls from the page.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Performs gesture `truth` once with fresh noise (scaled by
     * `noise_scale`) and classifies it.
     */
    classify(truth: number, noise_scale: number, thr: number, quantizer: string, seed: number): string;
    /**
     * Where one acceleration sample (g) lands in a gesture's codebook under
     * each statistical quantizer.
     */
    distributions(gesture: number, x: number, y: number, z: number): string;
    labels(): string;
    /**
     * Trains one model per gesture for the first `n_gestures` built-in
     * templates.
     */
    constructor(n_gestures: number, seed: number);
}

/**
 * Position error of a still phone whose pitch is off by each angle (degrees).
 */
export function drift(angles_deg: Float64Array, duration: number, dt: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_classify: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly demo_distributions: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly demo_labels: (a: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly drift: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
