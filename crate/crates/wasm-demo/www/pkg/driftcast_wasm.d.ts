/* tslint:disable */
/* eslint-disable */

/**
 * Cuts a sub-window out of the generated series and matches it against
 * the 13 reference shapes with DTW; returns the distances, the winner and
 * its sampled shape for overlay.
 */
export function match_window_against_templates(request: string): string;

/**
 * Generates a synthetic close-price series and its zigzag pivots at the
 * requested reversal threshold.
 */
export function series_with_pivots(request: string): string;

/**
 * Trains a small model right in the browser on a generated sine-and-walk
 * series, then forecasts the last held-out window and compares against
 * persistence. Takes a few seconds at the default settings.
 */
export function train_and_forecast(request: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly match_window_against_templates: (a: number, b: number) => [number, number, number, number];
    readonly series_with_pivots: (a: number, b: number) => [number, number, number, number];
    readonly train_and_forecast: (a: number, b: number) => [number, number, number, number];
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
