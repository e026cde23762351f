/* tslint:disable */
/* eslint-disable */

/**
 * Trains the blob MLP, samples its trajectory and returns the variance ratio
 * of every component, largest first.
 */
export function blob_spectrum(epochs: number, per_epoch: number, seed: bigint): Float64Array;

/**
 * Blob training with a fraction of labels corrupted: returns
 * `[sgd_final, sgd_best, psgd_final]` test accuracies.
 */
export function noise_demo(fraction: number, d: number, seed: bigint): Float64Array;

/**
 * P-BFGS against projected gradient descent (step `1 / cond`) on a random
 * quadratic in R^`n` restricted to a random `d`-dimensional subspace.
 * Returns `2 * steps` values: the P-BFGS loss gap, then the gradient-descent one.
 */
export function pbfgs_vs_gd(n: number, d: number, cond: number, steps: number, seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly blob_spectrum: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly noise_demo: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly pbfgs_vs_gd: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
