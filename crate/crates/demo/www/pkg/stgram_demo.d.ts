/* tslint:disable */
/* eslint-disable */

/**
 * A row-major `rows x cols` map.
 */
export class Heatmap {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    data(): Float32Array;
    readonly cols: number;
    readonly rows: number;
}

/**
 * ROC of normal scores `N(0, 1)` against anomaly scores `N(separation, 1)`.
 */
export class RocDemo {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    fpr(): Float64Array;
    tpr(): Float64Array;
    readonly auc: number;
    readonly pauc: number;
}

/**
 * Target logit against the angle `theta` in `[0, pi]`, sampled at `points`
 * angles: `[theta_0, logit_0, theta_1, logit_1, ...]`.
 */
export function arcfaceCurve(margin: number, scale: number, points: number): Float64Array;

export function humLogMel(f0: number, harmonics: number, mel_bins: number): Heatmap;

export function rocDemo(separation: number, normals: number, anomalies: number, p: number, seed: bigint): RocDemo;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_heatmap_free: (a: number, b: number) => void;
    readonly __wbg_rocdemo_free: (a: number, b: number) => void;
    readonly arcfaceCurve: (a: number, b: number, c: number) => [number, number];
    readonly heatmap_cols: (a: number) => number;
    readonly heatmap_data: (a: number) => [number, number];
    readonly heatmap_rows: (a: number) => number;
    readonly humLogMel: (a: number, b: number, c: number) => [number, number, number];
    readonly rocDemo: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
    readonly rocdemo_auc: (a: number) => number;
    readonly rocdemo_fpr: (a: number) => [number, number];
    readonly rocdemo_pauc: (a: number) => number;
    readonly rocdemo_tpr: (a: number) => [number, number];
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
