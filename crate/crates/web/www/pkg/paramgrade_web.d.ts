/* tslint:disable */
/* eslint-disable */

/**
 * `.cube` text for the grade; sharpness is not representable and ignored.
 */
export function bake_cube(params_json: string, size: number): string;

/**
 * Applies a grade (GradingParams JSON) to canvas `ImageData` bytes.
 * Alpha is passed through.
 */
export function grade_rgba(rgba: Uint8Array, width: number, height: number, params_json: string): Uint8Array;

/**
 * Normalised soft histogram, `3 * bins` values, red row first.
 */
export function histogram_rgba(rgba: Uint8Array, width: number, height: number, bins: number): Float32Array;

/**
 * Names, ranges and identity values as JSON, for building sliders.
 */
export function param_schema(): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly bake_cube: (a: number, b: number, c: number) => [number, number, number, number];
    readonly grade_rgba: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly histogram_rgba: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly param_schema: () => [number, number];
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
